//! Interception and response rewriting: intercept agent outputs, tool
//! calls, and history windows, and apply semantic-level (delegated) or
//! structure-level (deterministic) mutations.
//!
//! All deterministic mutators are pure and byte-reproducible under fixed
//! (input, params, seed).

use serde::{Deserialize, Serialize};

use crate::injector::{
    delegate, DelegationContext, InjectorEndpoint, InjectorError, TemplateCatalog,
};
use crate::taxonomy::{FaultType, InterceptionPoint};
use crate::trace::EventSink;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Reasoning,
    Plan,
    ToolCall,
    PlainMessage,
}

/// A tool invocation with structured arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallData {
    pub tool_name: String,
    pub arguments: serde_json::Value,
}

impl ToolCallData {
    /// Canonical serialized form used for delegation and digests.
    pub fn to_payload(&self) -> String {
        serde_json::to_string(self).expect("tool call serializes")
    }

    pub fn from_payload(payload: &str) -> Option<ToolCallData> {
        serde_json::from_str(payload).ok()
    }
}

/// An intercepted agent output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutput {
    pub producer: String,
    pub kind: OutputKind,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCallData>,
}

impl AgentOutput {
    pub fn text(producer: &str, kind: OutputKind, content: &str) -> Self {
        AgentOutput {
            producer: producer.to_string(),
            kind,
            content: content.to_string(),
            tool_call: None,
        }
    }

    pub fn tool(producer: &str, call: ToolCallData) -> Self {
        AgentOutput {
            producer: producer.to_string(),
            kind: OutputKind::ToolCall,
            content: call.to_payload(),
            tool_call: Some(call),
        }
    }
}

/// One message of an agent's conversation history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryMessage {
    pub sender: String,
    pub role: String,
    pub text: String,
    #[serde(default)]
    pub system: bool,
}

/// An ordered conversation history window.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HistoryWindow {
    pub messages: Vec<HistoryMessage>,
}

impl HistoryWindow {
    pub fn non_system_count(&self) -> usize {
        self.messages.iter().filter(|m| !m.system).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropPolicy {
    DropFirstN { n: u32 },
    DropAgent { agent: String },
}

#[derive(Debug, thiserror::Error)]
pub enum RewriteError {
    #[error("output kind {got:?} incompatible with {fault}; expected {expected}")]
    KindMismatch {
        fault: &'static str,
        expected: &'static str,
        got: OutputKind,
    },
    #[error(transparent)]
    Injector(#[from] InjectorError),
    #[error("tool catalog too small: need at least 2 tools, got {0}")]
    CatalogTooSmall(usize),
    #[error("tool {0} not present in the catalog")]
    ToolNotInCatalog(String),
    #[error("policy would remove every non-system message")]
    WouldEmptyHistory,
    #[error("no history message sent by agent {0}")]
    UnknownAgent(String),
    #[error("budget {budget} does not bind: history holds {total} chars")]
    BudgetNotBinding { budget: u32, total: usize },
    #[error("field {0} not found in payload")]
    FieldNotFound(String),
    #[error("payload already invalid: {0}")]
    AlreadyInvalid(String),
    #[error("no applicable mutation: {0}")]
    NotApplicable(String),
}

/// Delegate a semantic mutation of an intercepted output. Surface structure
/// is preserved: tool-call outputs must come back schema-parseable or the
/// call fails integrity checking.
pub fn rewrite_semantic(
    output: &AgentOutput,
    fault_type: FaultType,
    catalog: &TemplateCatalog,
    endpoint: &dyn InjectorEndpoint,
    max_retries: u32,
    seed: u64,
    task_id: &str,
    spec_id: &str,
    sink: &mut dyn EventSink,
) -> Result<AgentOutput, RewriteError> {
    let (expected, point): (&[OutputKind], InterceptionPoint) = match fault_type {
        FaultType::InexecutablePlan | FaultType::CriticalInfoLoss => {
            (&[OutputKind::Plan], InterceptionPoint::AgentOutputEgress)
        }
        FaultType::Hallucination => (
            &[OutputKind::Reasoning, OutputKind::PlainMessage],
            InterceptionPoint::AgentOutputEgress,
        ),
        FaultType::ToolSelectionError | FaultType::ParameterFillingError => {
            (&[OutputKind::ToolCall], InterceptionPoint::ToolCallEgress)
        }
        other => {
            return Err(RewriteError::KindMismatch {
                fault: other.name(),
                expected: "a semantic rewrite fault",
                got: output.kind,
            })
        }
    };
    if !expected.contains(&output.kind) {
        return Err(RewriteError::KindMismatch {
            fault: fault_type.name(),
            expected: match fault_type {
                FaultType::InexecutablePlan | FaultType::CriticalInfoLoss => "Plan",
                FaultType::Hallucination => "Reasoning or PlainMessage",
                _ => "ToolCall",
            },
            got: output.kind,
        });
    }

    let template = catalog
        .template(fault_type)
        .expect("semantic faults have templates");
    let original = match (&output.kind, &output.tool_call) {
        (OutputKind::ToolCall, Some(call)) => call.to_payload(),
        _ => output.content.clone(),
    };
    let mut ctx = DelegationContext {
        task_id,
        spec_id,
        point: Some(point),
        sink,
    };
    let mutated = delegate(&original, template, endpoint, max_retries, seed, &mut ctx)?;

    let mut out = output.clone();
    if output.kind == OutputKind::ToolCall {
        // The schema_parseable rule already gates this; re-check so the
        // post-condition holds even with a custom rule set.
        let call = ToolCallData::from_payload(&mutated).ok_or(
            InjectorError::IntegrityCheckFailed {
                attempts: 1,
                failed_rules: vec!["schema_parseable".into()],
            },
        )?;
        out.content = mutated;
        out.tool_call = Some(call);
    } else {
        out.content = mutated;
    }
    Ok(out)
}

/// Deterministic tool substitution: the replacement is picked by a modular
/// walk over the catalog that always skips the original.
pub fn swap_tool_deterministic(
    call: &ToolCallData,
    catalog: &[String],
    seed: u64,
) -> Result<ToolCallData, RewriteError> {
    if catalog.len() < 2 {
        return Err(RewriteError::CatalogTooSmall(catalog.len()));
    }
    let index = catalog
        .iter()
        .position(|t| *t == call.tool_name)
        .ok_or_else(|| RewriteError::ToolNotInCatalog(call.tool_name.clone()))?;
    let len = catalog.len();
    let offset = 1 + (seed as usize % (len - 1));
    let replacement = catalog[(index + offset) % len].clone();
    Ok(ToolCallData {
        tool_name: replacement,
        arguments: call.arguments.clone(),
    })
}

/// Deterministic parameter filling fallback: swap the values of the two
/// lexicographically first same-typed argument fields.
pub fn swap_params_deterministic(arguments: &serde_json::Value) -> Result<serde_json::Value, RewriteError> {
    let map = arguments
        .as_object()
        .ok_or_else(|| RewriteError::NotApplicable("arguments are not an object".into()))?;
    let mut keys: Vec<&String> = map.keys().collect();
    keys.sort();
    for i in 0..keys.len() {
        for j in (i + 1)..keys.len() {
            if json_type(&map[keys[i]]) == json_type(&map[keys[j]]) {
                let mut out = map.clone();
                let vi = out[keys[i]].clone();
                let vj = out[keys[j]].clone();
                out.insert(keys[i].clone(), vj);
                out.insert(keys[j].clone(), vi);
                return Ok(serde_json::Value::Object(out));
            }
        }
    }
    Err(RewriteError::NotApplicable(
        "no same-typed argument pair to swap".into(),
    ))
}

fn json_type(value: &serde_json::Value) -> u8 {
    match value {
        serde_json::Value::Null => 0,
        serde_json::Value::Bool(_) => 1,
        serde_json::Value::Number(_) => 2,
        serde_json::Value::String(_) => 3,
        serde_json::Value::Array(_) => 4,
        serde_json::Value::Object(_) => 5,
    }
}

/// Selectively truncate conversation history. System messages are always
/// retained and survivor order is preserved.
pub fn drop_memory(
    history: &HistoryWindow,
    policy: &DropPolicy,
) -> Result<HistoryWindow, RewriteError> {
    let non_system = history.non_system_count();
    match policy {
        DropPolicy::DropFirstN { n } => {
            if *n as usize >= non_system {
                return Err(RewriteError::WouldEmptyHistory);
            }
            let mut dropped = 0u32;
            let messages = history
                .messages
                .iter()
                .filter(|m| {
                    if !m.system && dropped < *n {
                        dropped += 1;
                        false
                    } else {
                        true
                    }
                })
                .cloned()
                .collect();
            Ok(HistoryWindow { messages })
        }
        DropPolicy::DropAgent { agent } => {
            let matching = history
                .messages
                .iter()
                .filter(|m| !m.system && m.sender == *agent)
                .count();
            if matching == 0 {
                return Err(RewriteError::UnknownAgent(agent.clone()));
            }
            if matching == non_system {
                return Err(RewriteError::WouldEmptyHistory);
            }
            let messages = history
                .messages
                .iter()
                .filter(|m| m.system || m.sender != *agent)
                .cloned()
                .collect();
            Ok(HistoryWindow { messages })
        }
    }
}

/// Marker message inserted where truncation happened.
pub const TRUNCATION_MARKER: &str = "[context truncated]";

/// Aggressively compress the history to a character budget: keep the suffix
/// of whole non-system messages whose cumulative character count fits, then
/// mark the cut. Newest messages win.
pub fn violate_context(
    history: &HistoryWindow,
    char_budget: u32,
) -> Result<HistoryWindow, RewriteError> {
    let total: usize = history
        .messages
        .iter()
        .filter(|m| !m.system)
        .map(|m| m.text.chars().count())
        .sum();
    if char_budget as usize >= total {
        return Err(RewriteError::BudgetNotBinding {
            budget: char_budget,
            total,
        });
    }

    // Walk newest-first to find the surviving suffix.
    let mut kept = vec![false; history.messages.len()];
    let mut budget_left = char_budget as usize;
    for (idx, msg) in history.messages.iter().enumerate().rev() {
        if msg.system {
            continue;
        }
        let len = msg.text.chars().count();
        if len <= budget_left {
            budget_left -= len;
            kept[idx] = true;
        } else {
            break;
        }
    }

    let marker = HistoryMessage {
        sender: "context".into(),
        role: "user".into(),
        text: TRUNCATION_MARKER.into(),
        system: false,
    };
    let mut messages = Vec::with_capacity(history.messages.len() + 1);
    let mut marker_placed = false;
    for (idx, msg) in history.messages.iter().enumerate() {
        if msg.system {
            messages.push(msg.clone());
        } else if kept[idx] {
            if !marker_placed {
                messages.push(marker.clone());
                marker_placed = true;
            }
            messages.push(msg.clone());
        }
    }
    if !marker_placed {
        messages.push(marker);
    }
    Ok(HistoryWindow { messages })
}

/// Corrupt the syntactic structure of a serialized tool-call payload. The
/// seed is accepted for mutator-interface uniformity; the three shipped
/// corruption kinds are fully deterministic.
pub fn corrupt_format(
    payload: &[u8],
    kind: &crate::spec::CorruptionKind,
    _seed: u64,
) -> Result<Vec<u8>, RewriteError> {
    let text = std::str::from_utf8(payload)
        .map_err(|e| RewriteError::AlreadyInvalid(format!("not utf-8: {e}")))?;
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| RewriteError::AlreadyInvalid(format!("does not parse: {e}")))?;
    if !value.is_object() {
        return Err(RewriteError::AlreadyInvalid(
            "payload is not a structured object".into(),
        ));
    }

    use crate::spec::CorruptionKind;
    match kind {
        CorruptionKind::DropClosingDelimiter => {
            let trimmed = text.trim_end();
            let last = trimmed.as_bytes().last().copied();
            match last {
                Some(b'}') | Some(b']') => Ok(trimmed[..trimmed.len() - 1].as_bytes().to_vec()),
                _ => Err(RewriteError::AlreadyInvalid(
                    "payload does not end with a closing delimiter".into(),
                )),
            }
        }
        CorruptionKind::RemoveRequiredField { field } => {
            let mut object = value;
            let map = object.as_object_mut().expect("checked above");
            if map.remove(field).is_none() {
                return Err(RewriteError::FieldNotFound(field.clone()));
            }
            Ok(serde_json::to_vec(&object).expect("object serializes"))
        }
        CorruptionKind::TypeFlip { field } => {
            let mut object = value;
            let map = object.as_object_mut().expect("checked above");
            let entry = map
                .get(field)
                .ok_or_else(|| RewriteError::FieldNotFound(field.clone()))?;
            let spelled = match entry {
                serde_json::Value::Number(n) => n.to_string(),
                _ => {
                    return Err(RewriteError::AlreadyInvalid(format!(
                        "field {field} is not numeric"
                    )))
                }
            };
            map.insert(field.clone(), serde_json::Value::String(spelled));
            Ok(serde_json::to_vec(&object).expect("object serializes"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::injector::{FixtureEndpoint, InjectorRequest};
    use crate::spec::CorruptionKind;
    use crate::trace::MemorySink;

    fn history(texts: &[(&str, bool)]) -> HistoryWindow {
        HistoryWindow {
            messages: texts
                .iter()
                .enumerate()
                .map(|(i, (text, system))| HistoryMessage {
                    sender: format!("agent{i}"),
                    role: if *system { "system".into() } else { "user".into() },
                    text: text.to_string(),
                    system: *system,
                })
                .collect(),
        }
    }

    #[test]
    fn swap_tool_single_alternative() {
        let call = ToolCallData {
            tool_name: "calculator".into(),
            arguments: serde_json::json!({"expr": "2+2"}),
        };
        let catalog = vec!["calculator".to_string(), "web_search".to_string()];
        let swapped = swap_tool_deterministic(&call, &catalog, 0).unwrap();
        assert_eq!(swapped.tool_name, "web_search");
        assert_eq!(swapped.arguments, call.arguments);
    }

    #[test]
    fn swap_tool_catalog_of_one_rejected() {
        let call = ToolCallData {
            tool_name: "calculator".into(),
            arguments: serde_json::json!({}),
        };
        assert!(matches!(
            swap_tool_deterministic(&call, &["calculator".to_string()], 0),
            Err(RewriteError::CatalogTooSmall(1))
        ));
    }

    #[test]
    fn swap_tool_index_formula() {
        // catalog [a,b,c], seed 1, call a: offset = 1 + (1 mod 2) = 2, so c.
        let call = ToolCallData {
            tool_name: "a".into(),
            arguments: serde_json::json!({}),
        };
        let catalog = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        assert_eq!(swap_tool_deterministic(&call, &catalog, 1).unwrap().tool_name, "c");
        assert_eq!(swap_tool_deterministic(&call, &catalog, 0).unwrap().tool_name, "b");
        // Never returns the original regardless of seed.
        for seed in 0..20 {
            assert_ne!(swap_tool_deterministic(&call, &catalog, seed).unwrap().tool_name, "a");
        }
    }

    #[test]
    fn drop_first_n_keeps_suffix_in_order() {
        let h = history(&[("m0", false), ("m1", false), ("m2", false), ("m3", false), ("m4", false)]);
        let out = drop_memory(&h, &DropPolicy::DropFirstN { n: 2 }).unwrap();
        let texts: Vec<_> = out.messages.iter().map(|m| m.text.as_str()).collect();
        assert_eq!(texts, vec!["m2", "m3", "m4"]);
    }

    #[test]
    fn drop_agent_removes_only_that_sender() {
        let mut h = history(&[("sys", true), ("a", false), ("b", false), ("c", false)]);
        h.messages[1].sender = "reviewer".into();
        h.messages[3].sender = "reviewer".into();
        let out = drop_memory(&h, &DropPolicy::DropAgent { agent: "reviewer".into() }).unwrap();
        let texts: Vec<_> = out.messages.iter().map(|m| m.text.as_str()).collect();
        assert_eq!(texts, vec!["sys", "b"]);
    }

    #[test]
    fn drop_all_messages_would_empty_history() {
        let h = history(&[("m0", false), ("m1", false), ("m2", false), ("m3", false), ("m4", false)]);
        assert!(matches!(
            drop_memory(&h, &DropPolicy::DropFirstN { n: 5 }),
            Err(RewriteError::WouldEmptyHistory)
        ));
    }

    #[test]
    fn drop_agent_matching_nothing_is_unknown() {
        let h = history(&[("m0", false)]);
        assert!(matches!(
            drop_memory(&h, &DropPolicy::DropAgent { agent: "ghost".into() }),
            Err(RewriteError::UnknownAgent(_))
        ));
    }

    #[test]
    fn context_violation_keeps_newest_whole_messages() {
        let h = history(&[(&"x".repeat(100), false), (&"y".repeat(100), false), (&"z".repeat(100), false)]);
        let out = violate_context(&h, 150).unwrap();
        let texts: Vec<_> = out.messages.iter().map(|m| m.text.as_str()).collect();
        assert_eq!(texts.len(), 2);
        assert_eq!(texts[0], TRUNCATION_MARKER);
        assert_eq!(texts[1], "z".repeat(100));
    }

    #[test]
    fn context_violation_exact_fit_keeps_two() {
        let h = history(&[(&"x".repeat(50), false), (&"y".repeat(50), false), (&"z".repeat(50), false)]);
        let out = violate_context(&h, 100).unwrap();
        let texts: Vec<_> = out.messages.iter().map(|m| m.text.as_str()).collect();
        assert_eq!(texts, vec![TRUNCATION_MARKER.to_string(), "y".repeat(50), "z".repeat(50)]);
    }

    #[test]
    fn non_binding_budget_is_an_error() {
        let h = history(&[(&"x".repeat(150), false), (&"y".repeat(150), false)]);
        assert!(matches!(
            violate_context(&h, 300),
            Err(RewriteError::BudgetNotBinding { .. })
        ));
    }

    #[test]
    fn system_messages_survive_truncation() {
        let h = history(&[("policy", true), (&"x".repeat(100), false), (&"y".repeat(10), false)]);
        let out = violate_context(&h, 50).unwrap();
        assert!(out.messages.iter().any(|m| m.system && m.text == "policy"));
        assert!(out.messages.iter().any(|m| m.text == "y".repeat(10)));
        assert!(!out.messages.iter().any(|m| m.text == "x".repeat(100)));
    }

    #[test]
    fn corrupt_drop_closing_delimiter() {
        let out = corrupt_format(br#"{"a":1}"#, &CorruptionKind::DropClosingDelimiter, 0).unwrap();
        assert_eq!(out, br#"{"a":1"#.to_vec());
        assert!(serde_json::from_slice::<serde_json::Value>(&out).is_err());
    }

    #[test]
    fn corrupt_type_flip_spells_the_number() {
        let out = corrupt_format(
            br#"{"n":5}"#,
            &CorruptionKind::TypeFlip { field: "n".into() },
            0,
        )
        .unwrap();
        let value: serde_json::Value = serde_json::from_slice(&out).unwrap();
        assert_eq!(value["n"], serde_json::json!("5"));
    }

    #[test]
    fn corrupt_missing_field_is_field_not_found() {
        let err = corrupt_format(
            br#"{"q":"x"}"#,
            &CorruptionKind::RemoveRequiredField { field: "missing".into() },
            0,
        )
        .unwrap_err();
        assert!(matches!(err, RewriteError::FieldNotFound(_)));
    }

    #[test]
    fn corrupt_rejects_invalid_input() {
        let err = corrupt_format(br#"{"a":1"#, &CorruptionKind::DropClosingDelimiter, 0).unwrap_err();
        assert!(matches!(err, RewriteError::AlreadyInvalid(_)));
    }

    #[test]
    fn swap_params_swaps_first_same_typed_pair() {
        let args = serde_json::json!({"lat": 1.0, "lon": 2.0, "q": "x"});
        let out = swap_params_deterministic(&args).unwrap();
        assert_eq!(out["lat"], serde_json::json!(2.0));
        assert_eq!(out["lon"], serde_json::json!(1.0));
        assert_eq!(out["q"], serde_json::json!("x"));
    }

    #[test]
    fn swap_params_without_pair_is_not_applicable() {
        let args = serde_json::json!({"lat": 1.0, "q": "x"});
        assert!(matches!(
            swap_params_deterministic(&args),
            Err(RewriteError::NotApplicable(_))
        ));
    }

    #[test]
    fn rewrite_semantic_tool_swap_via_fixture() {
        let catalog = TemplateCatalog::builtin();
        let template = catalog.template(FaultType::ToolSelectionError).unwrap();
        let call = ToolCallData {
            tool_name: "calculator".into(),
            arguments: serde_json::json!({"expr": "2+2"}),
        };
        let output = AgentOutput::tool("solver", call.clone());
        let canned = r#"{"tool_name":"web_search","arguments":{"expr":"2+2"}}"#;
        let request = InjectorRequest::new(&template.instruction_text, &call.to_payload(), 5);
        let endpoint = FixtureEndpoint::empty("fixture").with_response(&request, canned);

        let mut sink = MemorySink::new();
        let mutated = rewrite_semantic(
            &output,
            FaultType::ToolSelectionError,
            &catalog,
            &endpoint,
            2,
            5,
            "t1",
            "f1",
            &mut sink,
        )
        .unwrap();
        assert_eq!(mutated.tool_call.unwrap().tool_name, "web_search");
    }

    #[test]
    fn rewrite_semantic_kind_mismatch() {
        let catalog = TemplateCatalog::builtin();
        let endpoint = FixtureEndpoint::empty("fixture");
        let output = AgentOutput::text("planner", OutputKind::Reasoning, "thinking");
        let mut sink = MemorySink::new();
        let err = rewrite_semantic(
            &output,
            FaultType::InexecutablePlan,
            &catalog,
            &endpoint,
            0,
            0,
            "t1",
            "f1",
            &mut sink,
        )
        .unwrap_err();
        assert!(matches!(err, RewriteError::KindMismatch { .. }));
    }

    #[test]
    fn rewrite_semantic_plan_and_hallucination_via_fixture() {
        let catalog = TemplateCatalog::builtin();

        let plan_template = catalog.template(FaultType::InexecutablePlan).unwrap();
        let plan = "Step 1: load table. Step 2: sum revenue with calculator.";
        let plan_mutated = "Step 1: load table after Step 2 finishes. Step 2: sum revenue with \
                            calculator once Step 1 is done.";
        let plan_request = InjectorRequest::new(&plan_template.instruction_text, plan, 1);

        let reasoning_template = catalog.template(FaultType::Hallucination).unwrap();
        let reasoning = "the answer is likely 42";
        let reasoning_mutated = "the answer is definitively 42";
        let reasoning_request =
            InjectorRequest::new(&reasoning_template.instruction_text, reasoning, 1);

        let endpoint = FixtureEndpoint::empty("fixture")
            .with_response(&plan_request, plan_mutated)
            .with_response(&reasoning_request, reasoning_mutated);

        let mut sink = MemorySink::new();
        let out = rewrite_semantic(
            &AgentOutput::text("planner", OutputKind::Plan, plan),
            FaultType::InexecutablePlan,
            &catalog,
            &endpoint,
            0,
            1,
            "t1",
            "f1",
            &mut sink,
        )
        .unwrap();
        assert_eq!(out.content, plan_mutated);

        let out = rewrite_semantic(
            &AgentOutput::text("reasoner", OutputKind::Reasoning, reasoning),
            FaultType::Hallucination,
            &catalog,
            &endpoint,
            0,
            1,
            "t1",
            "f2",
            &mut sink,
        )
        .unwrap();
        assert_eq!(out.content, reasoning_mutated);
    }
}
