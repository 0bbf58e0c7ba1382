//! Behavior annotation: classify each task's fault-tolerant response into
//! the four-tier taxonomy with three-valued outcomes, rule-based for
//! simulator traces and judge-backed for real ones, plus inter-annotator
//! agreement via Cohen's kappa.

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::injector::{EndpointError, InjectorEndpoint, InjectorRequest};
use crate::metrics::Rate;
use crate::taxonomy::FaultType;
use crate::trace::{EventKind, FtTier, ReplayedTrace, TraceEvent};

/// Per-tier outcome: the tier resolved the fault, activated but failed, or
/// never activated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TierOutcome {
    Success,
    Failure,
    Inactive,
}

impl TierOutcome {
    fn grammar_letter(self) -> char {
        match self {
            TierOutcome::Success => 'S',
            TierOutcome::Failure => 'F',
            TierOutcome::Inactive => 'I',
        }
    }

    fn from_grammar_letter(c: &str) -> Option<TierOutcome> {
        match c {
            "S" => Some(TierOutcome::Success),
            "F" => Some(TierOutcome::Failure),
            "I" => Some(TierOutcome::Inactive),
            _ => None,
        }
    }
}

/// Per-task 4-tuple of tier outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorTag {
    pub mechanism: TierOutcome,
    pub rule: TierOutcome,
    pub prompt: TierOutcome,
    pub reasoning: TierOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// True when the transcript was summarized to fit the judge's context
    /// budget.
    #[serde(default)]
    pub summarized: bool,
}

impl BehaviorTag {
    pub fn inactive() -> Self {
        BehaviorTag {
            mechanism: TierOutcome::Inactive,
            rule: TierOutcome::Inactive,
            prompt: TierOutcome::Inactive,
            reasoning: TierOutcome::Inactive,
            label: None,
            summarized: false,
        }
    }

    pub fn outcome(&self, tier: FtTier) -> TierOutcome {
        match tier {
            FtTier::Mechanism => self.mechanism,
            FtTier::Rule => self.rule,
            FtTier::Prompt => self.prompt,
            FtTier::Reasoning => self.reasoning,
        }
    }

    fn set(&mut self, tier: FtTier, outcome: TierOutcome) {
        match tier {
            FtTier::Mechanism => self.mechanism = outcome,
            FtTier::Rule => self.rule = outcome,
            FtTier::Prompt => self.prompt = outcome,
            FtTier::Reasoning => self.reasoning = outcome,
        }
    }
}

/// Table-2 style behavior groups: every fault type individually, with the
/// three action faults folded into one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorGroup {
    InexecutablePlan,
    CriticalInfoLoss,
    MemoryLoss,
    ContextLengthViolation,
    Hallucination,
    ActionFault,
    RoleAmbiguity,
    BlindTrust,
    InstructionLogicConflict,
    InstructionAmbiguity,
    MessageStorm,
    MessageCycle,
    BroadcastAmplification,
}

pub const BEHAVIOR_GROUPS: [BehaviorGroup; 13] = [
    BehaviorGroup::InexecutablePlan,
    BehaviorGroup::CriticalInfoLoss,
    BehaviorGroup::MemoryLoss,
    BehaviorGroup::ContextLengthViolation,
    BehaviorGroup::Hallucination,
    BehaviorGroup::ActionFault,
    BehaviorGroup::RoleAmbiguity,
    BehaviorGroup::BlindTrust,
    BehaviorGroup::InstructionLogicConflict,
    BehaviorGroup::InstructionAmbiguity,
    BehaviorGroup::MessageStorm,
    BehaviorGroup::MessageCycle,
    BehaviorGroup::BroadcastAmplification,
];

pub fn behavior_group(fault_type: FaultType) -> BehaviorGroup {
    match fault_type {
        FaultType::InexecutablePlan => BehaviorGroup::InexecutablePlan,
        FaultType::CriticalInfoLoss => BehaviorGroup::CriticalInfoLoss,
        FaultType::MemoryLoss => BehaviorGroup::MemoryLoss,
        FaultType::ContextLengthViolation => BehaviorGroup::ContextLengthViolation,
        FaultType::Hallucination => BehaviorGroup::Hallucination,
        FaultType::ToolSelectionError
        | FaultType::ParameterFillingError
        | FaultType::ParameterFormatError => BehaviorGroup::ActionFault,
        FaultType::RoleAmbiguity => BehaviorGroup::RoleAmbiguity,
        FaultType::BlindTrust => BehaviorGroup::BlindTrust,
        FaultType::InstructionLogicConflict => BehaviorGroup::InstructionLogicConflict,
        FaultType::InstructionAmbiguity => BehaviorGroup::InstructionAmbiguity,
        FaultType::MessageStorm => BehaviorGroup::MessageStorm,
        FaultType::MessageCycle => BehaviorGroup::MessageCycle,
        FaultType::MessageBroadcastAmplification => BehaviorGroup::BroadcastAmplification,
    }
}

/// One named behavior with its tier-outcome signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorRow {
    pub label: String,
    pub mechanism: TierOutcome,
    pub rule: TierOutcome,
    pub prompt: TierOutcome,
    pub reasoning: TierOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorGroupRows {
    pub group: BehaviorGroup,
    pub behaviors: Vec<BehaviorRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorCatalog {
    pub catalog_version: u32,
    pub groups: Vec<BehaviorGroupRows>,
}

const BUILTIN_BEHAVIORS: &str = include_str!("catalogs/behaviors.json");

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error("invalid behavior catalog: {0}")]
    Catalog(String),
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),
    #[error("unparseable judge verdict after {attempts} attempts")]
    UnparseableVerdict { attempts: u32 },
}

impl BehaviorCatalog {
    pub fn builtin() -> BehaviorCatalog {
        let catalog: BehaviorCatalog =
            serde_json::from_str(BUILTIN_BEHAVIORS).expect("builtin behavior catalog parses");
        catalog.validate().expect("builtin behavior catalog valid");
        catalog
    }

    pub fn from_path(path: &std::path::Path) -> Result<BehaviorCatalog, AnnotateError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| AnnotateError::Catalog(format!("{}: {e}", path.display())))?;
        let catalog: BehaviorCatalog =
            serde_json::from_str(&raw).map_err(|e| AnnotateError::Catalog(e.to_string()))?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn validate(&self) -> Result<(), AnnotateError> {
        for group in BEHAVIOR_GROUPS {
            let count = self.groups.iter().filter(|g| g.group == group).count();
            if count != 1 {
                return Err(AnnotateError::Catalog(format!(
                    "expected exactly one entry for group {group:?}, found {count}"
                )));
            }
        }
        for group in &self.groups {
            if group.behaviors.is_empty() {
                return Err(AnnotateError::Catalog(format!(
                    "group {:?} has no behaviors",
                    group.group
                )));
            }
            let mut labels = std::collections::BTreeSet::new();
            for row in &group.behaviors {
                if row.label.is_empty() {
                    return Err(AnnotateError::Catalog(format!(
                        "group {:?} has a behavior with an empty label",
                        group.group
                    )));
                }
                if !labels.insert(row.label.clone()) {
                    return Err(AnnotateError::Catalog(format!(
                        "group {:?} repeats label {}",
                        group.group, row.label
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn rows(&self, group: BehaviorGroup) -> &[BehaviorRow] {
        self.groups
            .iter()
            .find(|g| g.group == group)
            .map(|g| g.behaviors.as_slice())
            .unwrap_or(&[])
    }

    /// First catalog row whose signature matches the tag's tier outcomes.
    fn matching_label(&self, group: BehaviorGroup, tag: &BehaviorTag) -> Option<String> {
        self.rows(group)
            .iter()
            .find(|row| {
                row.mechanism == tag.mechanism
                    && row.rule == tag.rule
                    && row.prompt == tag.prompt
                    && row.reasoning == tag.reasoning
            })
            .map(|row| row.label.clone())
    }
}

/// Rule-based annotation straight off the tier-labeled events: Inactive
/// without a trigger, Success when triggered and fixed, Failure when
/// triggered without a fix. Pure and idempotent over the event stream.
pub fn annotate_rule_based(trace: &ReplayedTrace, catalog: &BehaviorCatalog) -> BehaviorTag {
    let mut tag = BehaviorTag::inactive();
    for tier in FtTier::ALL {
        let triggered = trace
            .events
            .iter()
            .any(|e| e.kind == EventKind::FtTriggered && e.tier == Some(tier));
        let fixed = trace
            .events
            .iter()
            .any(|e| e.kind == EventKind::FtFixed && e.tier == Some(tier));
        let outcome = match (triggered, fixed) {
            (false, _) => TierOutcome::Inactive,
            (true, true) => TierOutcome::Success,
            (true, false) => TierOutcome::Failure,
        };
        tag.set(tier, outcome);
    }
    if let Some(fault_type) = trace.header.fault_type {
        tag.label = catalog.matching_label(behavior_group(fault_type), &tag);
    }
    tag
}

/// Judge-backed annotation options.
#[derive(Debug, Clone)]
pub struct JudgeOptions {
    pub max_retries: u32,
    /// Transcript character budget; longer traces are summarized to the
    /// last `last_k` events (and hard-truncated if still over).
    pub context_budget: usize,
    pub last_k: usize,
    pub seed: u64,
}

impl Default for JudgeOptions {
    fn default() -> Self {
        JudgeOptions {
            max_retries: 2,
            context_budget: 16_000,
            last_k: 50,
            seed: 0,
        }
    }
}

fn render_event_line(event: &TraceEvent) -> String {
    let mut line = format!("#{} {:?}", event.seq, event.kind);
    if let Some(agent) = &event.agent_id {
        line.push_str(&format!(" agent={agent}"));
    }
    if let Some(tier) = event.tier {
        line.push_str(&format!(" tier={}", tier.name()));
    }
    if let Some(success) = event.success {
        line.push_str(&format!(" success={success}"));
    }
    if let Some(point) = event.point {
        line.push_str(&format!(" point={point:?}"));
    }
    if !event.detail.is_empty() {
        line.push_str(&format!(
            " {}",
            serde_json::to_string(&event.detail).unwrap_or_default()
        ));
    }
    line
}

/// Render the transcript within the budget. Returns (text, summarized).
pub fn render_transcript(
    events: &[TraceEvent],
    context_budget: usize,
    last_k: usize,
) -> (String, bool) {
    let full: Vec<String> = events.iter().map(render_event_line).collect();
    let joined = full.join("\n");
    if joined.chars().count() <= context_budget {
        return (joined, false);
    }
    let tail_start = full.len().saturating_sub(last_k);
    let mut summarized = format!(
        "[transcript summarized: showing last {} of {} events]\n{}",
        full.len() - tail_start,
        full.len(),
        full[tail_start..].join("\n")
    );
    if summarized.chars().count() > context_budget {
        let chars: Vec<char> = summarized.chars().collect();
        summarized = chars[chars.len() - context_budget..].iter().collect();
    }
    (summarized, true)
}

fn judge_instruction(catalog: &BehaviorCatalog, group: Option<BehaviorGroup>) -> String {
    let mut text = String::from(
        "You are annotating the execution trace of a multi-agent system that ran under fault \
         injection. Classify the fault-tolerant behavior into four tiers and answer, for each \
         tier: S if the tier activated and resolved the fault, F if it activated but failed to \
         resolve it, I if it never activated.\n\
         Tier definitions:\n\
         - MECHANISM: resilience supplied by the system's structural design, such as iterative \
         critique loops, voting, redundant execution paths, or automatic retries.\n\
         - RULE: resilience supplied by explicit procedural logic, such as message \
         deduplication, subscription filtering, format validation, or loop guards.\n\
         - PROMPT: resilience rooted in the robustness of role and task prompts, such as an \
         agent holding to its original role despite corrupted directives.\n\
         - REASONING: resilience supplied by the model's own inference, such as noticing \
         inconsistencies, inferring missing context, or challenging suspicious input.\n",
    );
    if let Some(group) = group {
        text.push_str("Known behaviors for this fault:\n");
        for row in catalog.rows(group) {
            text.push_str(&format!(
                "- {} (MECHANISM={} RULE={} PROMPT={} REASONING={})\n",
                row.label,
                row.mechanism.grammar_letter(),
                row.rule.grammar_letter(),
                row.prompt.grammar_letter(),
                row.reasoning.grammar_letter(),
            ));
        }
    }
    text.push_str(
        "Respond with exactly one line in this format:\n\
         MECHANISM=<S|F|I> RULE=<S|F|I> PROMPT=<S|F|I> REASONING=<S|F|I> LABEL=<short label>\n",
    );
    text
}

/// Parse a verdict line against the strict answer grammar.
pub fn parse_verdict(response: &str) -> Option<BehaviorTag> {
    for line in response.lines() {
        let line = line.trim();
        if !line.starts_with("MECHANISM=") {
            continue;
        }
        let (head, label) = match line.find(" LABEL=") {
            Some(idx) => (&line[..idx], Some(line[idx + 7..].trim().to_string())),
            None => (line, None),
        };
        let mut fields = head.split_whitespace();
        let mut parsed = Vec::new();
        for expected in ["MECHANISM", "RULE", "PROMPT", "REASONING"] {
            let token = fields.next()?;
            let (key, value) = token.split_once('=')?;
            if key != expected {
                return None;
            }
            parsed.push(TierOutcome::from_grammar_letter(value)?);
        }
        if fields.next().is_some() {
            return None;
        }
        return Some(BehaviorTag {
            mechanism: parsed[0],
            rule: parsed[1],
            prompt: parsed[2],
            reasoning: parsed[3],
            label: label.filter(|l| !l.is_empty()),
            summarized: false,
        });
    }
    None
}

/// Judge-backed annotation: the prompt embeds the tier definitions, the
/// fault's catalog rows, and the (possibly summarized) transcript; the
/// verdict must match the answer grammar or the call retries.
pub fn annotate_llm(
    trace: &ReplayedTrace,
    catalog: &BehaviorCatalog,
    judge: &dyn InjectorEndpoint,
    opts: &JudgeOptions,
) -> Result<BehaviorTag, AnnotateError> {
    let group = trace.header.fault_type.map(behavior_group);
    let instruction = judge_instruction(catalog, group);
    let (transcript, summarized) = render_transcript(&trace.events, opts.context_budget, opts.last_k);

    let attempts = opts.max_retries + 1;
    let mut last_transport: Option<String> = None;
    for attempt in 0..attempts {
        let request = InjectorRequest::new(
            &instruction,
            &transcript,
            opts.seed.wrapping_add(attempt as u64),
        );
        match judge.complete(&request) {
            Err(EndpointError::Transport(e)) | Err(EndpointError::Status(_, e)) => {
                last_transport = Some(e);
            }
            Err(EndpointError::UnknownDigest(d)) => {
                last_transport = Some(format!("no fixture for digest {d}"));
            }
            Ok(response) => {
                if let Some(mut tag) = parse_verdict(&response) {
                    tag.summarized = summarized;
                    return Ok(tag);
                }
            }
        }
    }
    if let Some(err) = last_transport {
        return Err(AnnotateError::JudgeUnavailable(err));
    }
    Err(AnnotateError::UnparseableVerdict { attempts })
}

// ---------------------------------------------------------------------------
// Cohen's kappa
// ---------------------------------------------------------------------------

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum KappaError {
    #[error("label sequences differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
}

/// Cohen's kappa between two annotators over the same items:
/// (p_o - p_e) / (1 - p_e), with chance agreement from the marginal label
/// frequencies. Perfect agreement with degenerate marginals (p_e = 1)
/// yields 1.
pub fn cohen_kappa<L: PartialEq, F: Float + FromPrimitive>(
    a: &[L],
    b: &[L],
) -> Result<F, KappaError> {
    if a.len() != b.len() {
        return Err(KappaError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(KappaError::EmptyInput);
    }
    let n = a.len();

    // Distinct labels in first-appearance order keeps float summation
    // deterministic.
    let mut labels: Vec<&L> = Vec::new();
    for label in a.iter().chain(b.iter()) {
        if !labels.iter().any(|l| *l == label) {
            labels.push(label);
        }
    }

    let observed = a.iter().zip(b.iter()).filter(|(x, y)| x == y).count();
    let nf = F::from_usize(n).expect("count fits float");
    let p_o = F::from_usize(observed).expect("count fits float") / nf;

    // Summing the per-label products in sorted order makes the result
    // independent of label order, so kappa is exactly symmetric.
    let mut products: Vec<F> = labels
        .iter()
        .map(|label| {
            let ca = a.iter().filter(|x| x == label).count();
            let cb = b.iter().filter(|x| x == label).count();
            (F::from_usize(ca).expect("count fits float") / nf)
                * (F::from_usize(cb).expect("count fits float") / nf)
        })
        .collect();
    products.sort_by(|x, y| x.partial_cmp(y).expect("rates are finite"));
    let mut p_e = F::zero();
    for product in products {
        p_e = p_e + product;
    }

    if p_o == F::one() {
        return Ok(F::one());
    }
    Ok((p_o - p_e) / (F::one() - p_e))
}

/// Kappa per tier plus pooled over all four tiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaReport<F> {
    pub mechanism: Rate<F>,
    pub rule: Rate<F>,
    pub prompt: Rate<F>,
    pub reasoning: Rate<F>,
    pub pooled: F,
}

pub fn kappa_per_tier<F: Float + FromPrimitive>(
    a: &[BehaviorTag],
    b: &[BehaviorTag],
) -> Result<KappaReport<F>, KappaError> {
    if a.len() != b.len() {
        return Err(KappaError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(KappaError::EmptyInput);
    }
    let tier_labels = |tags: &[BehaviorTag], tier: FtTier| -> Vec<TierOutcome> {
        tags.iter().map(|t| t.outcome(tier)).collect()
    };
    let mut per_tier = Vec::new();
    for tier in FtTier::ALL {
        let la = tier_labels(a, tier);
        let lb = tier_labels(b, tier);
        // A tier that never activated for either annotator gives a
        // degenerate 1.0; keep it defined since agreement is real.
        per_tier.push(Rate::defined(cohen_kappa::<_, F>(&la, &lb)?));
    }
    let pooled_a: Vec<TierOutcome> = FtTier::ALL
        .into_iter()
        .flat_map(|tier| tier_labels(a, tier))
        .collect();
    let pooled_b: Vec<TierOutcome> = FtTier::ALL
        .into_iter()
        .flat_map(|tier| tier_labels(b, tier))
        .collect();
    Ok(KappaReport {
        mechanism: per_tier[0],
        rule: per_tier[1],
        prompt: per_tier[2],
        reasoning: per_tier[3],
        pooled: cohen_kappa(&pooled_a, &pooled_b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::injector::{SequenceEndpoint, SequenceStep};
    use crate::trace::{TraceHeader, TraceEvent};

    fn trace_with(events: Vec<TraceEvent>, fault_type: Option<FaultType>) -> ReplayedTrace {
        let mut header = TraceHeader::new(1, "t1");
        if let Some(ft) = fault_type {
            header = header.with_spec("f1", ft);
        }
        ReplayedTrace {
            header,
            events,
            outcome: None,
        }
    }

    #[test]
    fn rule_triggered_and_fixed_is_rule_success() {
        let events = vec![
            TraceEvent::ft_triggered(0, "t1", FtTier::Rule),
            TraceEvent::ft_fixed(1, "t1", FtTier::Rule),
            TraceEvent::task_result(2, "t1", true),
        ];
        let tag = annotate_rule_based(
            &trace_with(events, Some(FaultType::MessageStorm)),
            &BehaviorCatalog::builtin(),
        );
        assert_eq!(tag.mechanism, TierOutcome::Inactive);
        assert_eq!(tag.rule, TierOutcome::Success);
        assert_eq!(tag.prompt, TierOutcome::Inactive);
        assert_eq!(tag.reasoning, TierOutcome::Inactive);
        assert_eq!(tag.label.as_deref(), Some("System correctly filters messages"));
    }

    #[test]
    fn no_ft_events_is_all_inactive() {
        let events = vec![TraceEvent::task_result(0, "t1", true)];
        let tag = annotate_rule_based(&trace_with(events, None), &BehaviorCatalog::builtin());
        assert_eq!(tag, BehaviorTag { label: None, ..BehaviorTag::inactive() });
    }

    #[test]
    fn trigger_without_fix_is_failure() {
        let events = vec![
            TraceEvent::ft_triggered(0, "t1", FtTier::Reasoning),
            TraceEvent::task_result(1, "t1", false),
        ];
        let tag = annotate_rule_based(&trace_with(events, None), &BehaviorCatalog::builtin());
        assert_eq!(tag.reasoning, TierOutcome::Failure);
    }

    #[test]
    fn rule_annotation_is_idempotent() {
        let events = vec![
            TraceEvent::ft_triggered(0, "t1", FtTier::Mechanism),
            TraceEvent::ft_fixed(1, "t1", FtTier::Mechanism),
            TraceEvent::task_result(2, "t1", true),
        ];
        let trace = trace_with(events, Some(FaultType::InexecutablePlan));
        let catalog = BehaviorCatalog::builtin();
        assert_eq!(
            annotate_rule_based(&trace, &catalog),
            annotate_rule_based(&trace, &catalog)
        );
    }

    #[test]
    fn builtin_catalog_has_all_thirteen_groups() {
        let catalog = BehaviorCatalog::builtin();
        assert_eq!(catalog.groups.len(), 13);
        for group in BEHAVIOR_GROUPS {
            assert!(!catalog.rows(group).is_empty());
        }
    }

    #[test]
    fn judge_verdict_parses() {
        let trace = trace_with(
            vec![TraceEvent::task_result(0, "t1", true)],
            Some(FaultType::BlindTrust),
        );
        let judge = SequenceEndpoint::new(vec![SequenceStep::Text(
            "MECHANISM=I RULE=I PROMPT=S REASONING=F LABEL=Judges independently but correction fails"
                .into(),
        )]);
        let tag = annotate_llm(
            &trace,
            &BehaviorCatalog::builtin(),
            &judge,
            &JudgeOptions::default(),
        )
        .unwrap();
        assert_eq!(tag.prompt, TierOutcome::Success);
        assert_eq!(tag.reasoning, TierOutcome::Failure);
        assert_eq!(
            tag.label.as_deref(),
            Some("Judges independently but correction fails")
        );
    }

    #[test]
    fn free_prose_verdict_exhausts_retries() {
        let trace = trace_with(
            vec![TraceEvent::task_result(0, "t1", true)],
            Some(FaultType::BlindTrust),
        );
        let judge = SequenceEndpoint::new(vec![SequenceStep::Text(
            "The system behaved admirably given the circumstances.".into(),
        )]);
        let err = annotate_llm(
            &trace,
            &BehaviorCatalog::builtin(),
            &judge,
            &JudgeOptions {
                max_retries: 2,
                ..JudgeOptions::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, AnnotateError::UnparseableVerdict { attempts: 3 }));
        assert_eq!(judge.calls(), 3);
    }

    #[test]
    fn oversized_transcript_is_summarized_within_budget() {
        let events: Vec<TraceEvent> = (0..200)
            .map(|i| TraceEvent::msg_sent(i, "t1", "chatterbox"))
            .collect();
        let (text, summarized) = render_transcript(&events, 500, 10);
        assert!(summarized);
        assert!(text.chars().count() <= 500);
        assert!(text.contains("#199") || text.ends_with("chatterbox"));
    }

    #[test]
    fn kappa_identical_sequences_is_one() {
        let a = ["x", "y", "x", "z"];
        let kappa: f64 = cohen_kappa(&a, &a).unwrap();
        assert_eq!(kappa, 1.0);
    }

    #[test]
    fn kappa_hand_example_is_zero() {
        let a = ["X", "X", "Y", "Y"];
        let b = ["X", "Y", "X", "Y"];
        let kappa: f64 = cohen_kappa(&a, &b).unwrap();
        assert_eq!(kappa, 0.0);
    }

    #[test]
    fn kappa_errors() {
        let a = ["x"];
        let b = ["x", "y"];
        assert_eq!(
            cohen_kappa::<_, f64>(&a, &b).unwrap_err(),
            KappaError::LengthMismatch(1, 2)
        );
        let empty: [&str; 0] = [];
        assert_eq!(
            cohen_kappa::<_, f64>(&empty, &empty).unwrap_err(),
            KappaError::EmptyInput
        );
    }

    #[test]
    fn kappa_symmetric() {
        let a = ["x", "y", "z", "x", "y"];
        let b = ["y", "y", "z", "x", "x"];
        let ab: f64 = cohen_kappa(&a, &b).unwrap();
        let ba: f64 = cohen_kappa(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn per_tier_kappa_pools_all_tiers() {
        let mut tag_a = BehaviorTag::inactive();
        tag_a.rule = TierOutcome::Success;
        let mut tag_b = BehaviorTag::inactive();
        tag_b.rule = TierOutcome::Failure;
        let report: KappaReport<f64> =
            kappa_per_tier(&[tag_a.clone(), tag_a.clone()], &[tag_a.clone(), tag_b]).unwrap();
        assert_eq!(report.mechanism.value(), Some(1.0));
        assert!(report.pooled < 1.0);
    }
}
