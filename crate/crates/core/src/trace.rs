//! Canonical execution-trace schema and append-only persistence.
//!
//! A trace file holds one task's execution: a single JSON header line, one
//! JSON event per line, and (when the task produced a result) a final
//! outcome line re-derivable from the events. Events carry content digests
//! rather than payload bodies, so traces are comparable across platforms;
//! the digest algorithm is named in the header.
//!
//! Invariants enforced at append time:
//! - `seq` strictly increasing within a task
//! - `ft_fixed(tier)` requires a prior `ft_triggered` for the same tier
//! - exactly one `task_result`, and nothing after it

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::taxonomy::{FaultType, InterceptionPoint};

/// The source of a fault-tolerant behavior.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum FtTier {
    Mechanism,
    Rule,
    Prompt,
    Reasoning,
}

impl FtTier {
    pub const ALL: [FtTier; 4] = [
        FtTier::Mechanism,
        FtTier::Rule,
        FtTier::Prompt,
        FtTier::Reasoning,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FtTier::Mechanism => "mechanism",
            FtTier::Rule => "rule",
            FtTier::Prompt => "prompt",
            FtTier::Reasoning => "reasoning",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    MsgSent,
    MsgReceived,
    MsgFiltered,
    LoopDetected,
    FaultInjected,
    InjectionAttempt,
    FtTriggered,
    FtFixed,
    TaskResult,
}

/// One logical step of an execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<String>,
    pub kind: EventKind,
    /// Present on ft_triggered / ft_fixed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<FtTier>,
    /// Present on task_result.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
    /// Present on injection_attempt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<u32>,
    /// Present on fault_injected and injection_attempt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<InterceptionPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_digest: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub detail: BTreeMap<String, serde_json::Value>,
}

impl TraceEvent {
    fn base(seq: u64, task_id: &str, kind: EventKind) -> Self {
        TraceEvent {
            seq,
            task_id: task_id.to_string(),
            spec_id: None,
            agent_id: None,
            kind,
            tier: None,
            success: None,
            attempt: None,
            point: None,
            payload_digest: None,
            detail: BTreeMap::new(),
        }
    }

    pub fn with_spec(mut self, spec_id: &str) -> Self {
        self.spec_id = Some(spec_id.to_string());
        self
    }

    pub fn with_agent(mut self, agent_id: &str) -> Self {
        self.agent_id = Some(agent_id.to_string());
        self
    }

    pub fn with_digest(mut self, digest: String) -> Self {
        self.payload_digest = Some(digest);
        self
    }

    pub fn with_detail(mut self, key: &str, value: serde_json::Value) -> Self {
        self.detail.insert(key.to_string(), value);
        self
    }

    pub fn msg_sent(seq: u64, task_id: &str, sender: &str) -> Self {
        Self::base(seq, task_id, EventKind::MsgSent).with_agent(sender)
    }

    pub fn msg_received(seq: u64, task_id: &str, recipient: &str) -> Self {
        Self::base(seq, task_id, EventKind::MsgReceived).with_agent(recipient)
    }

    pub fn msg_filtered(seq: u64, task_id: &str, recipient: &str, reason: &str) -> Self {
        Self::base(seq, task_id, EventKind::MsgFiltered)
            .with_agent(recipient)
            .with_detail("reason", serde_json::Value::String(reason.to_string()))
    }

    pub fn loop_detected(seq: u64, task_id: &str, agent: &str) -> Self {
        Self::base(seq, task_id, EventKind::LoopDetected).with_agent(agent)
    }

    pub fn fault_injected(
        seq: u64,
        task_id: &str,
        spec_id: &str,
        point: InterceptionPoint,
    ) -> Self {
        let mut ev = Self::base(seq, task_id, EventKind::FaultInjected).with_spec(spec_id);
        ev.point = Some(point);
        ev
    }

    /// Routing faults act on the bus and carry no interception point.
    pub fn fault_injected_routing(seq: u64, task_id: &str, spec_id: &str) -> Self {
        Self::base(seq, task_id, EventKind::FaultInjected).with_spec(spec_id)
    }

    pub fn injection_attempt(seq: u64, task_id: &str, spec_id: &str, attempt: u32) -> Self {
        let mut ev = Self::base(seq, task_id, EventKind::InjectionAttempt).with_spec(spec_id);
        ev.attempt = Some(attempt);
        ev
    }

    pub fn ft_triggered(seq: u64, task_id: &str, tier: FtTier) -> Self {
        let mut ev = Self::base(seq, task_id, EventKind::FtTriggered);
        ev.tier = Some(tier);
        ev
    }

    pub fn ft_fixed(seq: u64, task_id: &str, tier: FtTier) -> Self {
        let mut ev = Self::base(seq, task_id, EventKind::FtFixed);
        ev.tier = Some(tier);
        ev
    }

    pub fn task_result(seq: u64, task_id: &str, success: bool) -> Self {
        let mut ev = Self::base(seq, task_id, EventKind::TaskResult);
        ev.success = Some(success);
        ev
    }
}

/// Per-tier trigger/fix counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierCount {
    pub triggered: u32,
    pub fixed: u32,
}

/// Per-task result, derivable from the task's event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    /// `None` marks the baseline (fault-free) pass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_id: Option<String>,
    pub success: bool,
    /// False when the configured fault could not apply to this task (e.g.
    /// an action fault on a task with no tool invocation).
    #[serde(default = "default_true")]
    pub fault_applicable: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ft_summary: BTreeMap<FtTier, TierCount>,
}

fn default_true() -> bool {
    true
}

impl TaskOutcome {
    pub fn any_triggered(&self) -> bool {
        self.ft_summary.values().any(|c| c.triggered > 0)
    }

    pub fn any_fixed(&self) -> bool {
        self.ft_summary.values().any(|c| c.fixed > 0)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace invariant violated: {0}")]
    InvariantViolation(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt trace at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

/// Header line at the start of every trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub campaign_seed: u64,
    pub hash_algo: String,
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_type: Option<FaultType>,
    /// The run used a deterministic fallback for a semantic fault.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub offline_fallback: bool,
}

impl TraceHeader {
    pub fn new(campaign_seed: u64, task_id: &str) -> Self {
        TraceHeader {
            schema_version: 1,
            campaign_seed,
            hash_algo: "sha256".to_string(),
            task_id: task_id.to_string(),
            spec_id: None,
            fault_type: None,
            offline_fallback: false,
        }
    }

    pub fn with_spec(mut self, spec_id: &str, fault_type: FaultType) -> Self {
        self.spec_id = Some(spec_id.to_string());
        self.fault_type = Some(fault_type);
        self
    }

    pub fn with_offline_fallback(mut self, offline_fallback: bool) -> Self {
        self.offline_fallback = offline_fallback;
        self
    }
}

/// Hex sha256 of a payload, the digest form used everywhere in traces.
pub fn payload_digest(content: &[u8]) -> String {
    hex::encode(Sha256::digest(content))
}

/// Validates the per-task event invariants as events arrive.
#[derive(Debug, Clone, Default)]
pub struct EventValidator {
    last_seq: Option<u64>,
    triggered: BTreeMap<FtTier, u32>,
    fixed: BTreeMap<FtTier, u32>,
    result: Option<bool>,
}

impl EventValidator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Check one event against the task's prior events and absorb it.
    pub fn check(&mut self, event: &TraceEvent) -> Result<(), TraceError> {
        if self.result.is_some() {
            return Err(TraceError::InvariantViolation(
                "event after task_result".into(),
            ));
        }
        if let Some(last) = self.last_seq {
            if event.seq <= last {
                return Err(TraceError::InvariantViolation(format!(
                    "seq {} not greater than previous {}",
                    event.seq, last
                )));
            }
        }
        match event.kind {
            EventKind::FtTriggered => {
                let tier = event.tier.ok_or_else(|| {
                    TraceError::InvariantViolation("ft_triggered without tier".into())
                })?;
                *self.triggered.entry(tier).or_insert(0) += 1;
            }
            EventKind::FtFixed => {
                let tier = event.tier.ok_or_else(|| {
                    TraceError::InvariantViolation("ft_fixed without tier".into())
                })?;
                if self.triggered.get(&tier).copied().unwrap_or(0) == 0 {
                    return Err(TraceError::InvariantViolation(format!(
                        "ft_fixed({}) without prior ft_triggered({})",
                        tier.name(),
                        tier.name()
                    )));
                }
                *self.fixed.entry(tier).or_insert(0) += 1;
            }
            EventKind::TaskResult => {
                let success = event.success.ok_or_else(|| {
                    TraceError::InvariantViolation("task_result without success flag".into())
                })?;
                self.result = Some(success);
            }
            EventKind::InjectionAttempt => {
                if event.attempt.is_none() {
                    return Err(TraceError::InvariantViolation(
                        "injection_attempt without attempt index".into(),
                    ));
                }
            }
            EventKind::FaultInjected => {
                if event.spec_id.is_none() {
                    return Err(TraceError::InvariantViolation(
                        "fault_injected without spec id".into(),
                    ));
                }
            }
            _ => {}
        }
        self.last_seq = Some(event.seq);
        Ok(())
    }

    pub fn has_result(&self) -> bool {
        self.result.is_some()
    }

    fn summary(&self) -> BTreeMap<FtTier, TierCount> {
        let mut out = BTreeMap::new();
        for (&tier, &triggered) in &self.triggered {
            out.entry(tier).or_insert_with(TierCount::default).triggered = triggered;
        }
        for (&tier, &fixed) in &self.fixed {
            out.entry(tier).or_insert_with(TierCount::default).fixed = fixed;
        }
        out
    }
}

/// Derive the task outcome from a complete, valid event sequence.
/// `fault_applicable` comes from the task_result event's detail map and
/// defaults to true.
pub fn derive_outcome(
    events: &[TraceEvent],
    spec_id: Option<&str>,
) -> Result<TaskOutcome, TraceError> {
    let mut validator = EventValidator::new();
    let mut task_id = None;
    let mut result_event = None;
    for event in events {
        validator.check(event)?;
        task_id.get_or_insert_with(|| event.task_id.clone());
        if event.kind == EventKind::TaskResult {
            result_event = Some(event);
        }
    }
    let result = result_event.ok_or_else(|| {
        TraceError::InvariantViolation("no task_result in event stream".into())
    })?;
    let fault_applicable = result
        .detail
        .get("fault_applicable")
        .and_then(|v| v.as_bool())
        .unwrap_or(true);
    Ok(TaskOutcome {
        task_id: task_id.unwrap_or_default(),
        spec_id: spec_id.map(str::to_string),
        success: result.success.unwrap_or(false),
        fault_applicable,
        ft_summary: validator.summary(),
    })
}

/// Trailer line carrying the stored outcome.
#[derive(Debug, Serialize, Deserialize)]
struct OutcomeLine {
    outcome: TaskOutcome,
}

/// Append-only writer for one task's trace file.
pub struct TraceWriter<W: Write> {
    sink: W,
    header: TraceHeader,
    validator: EventValidator,
    next_seq: u64,
    events: Vec<TraceEvent>,
}

impl TraceWriter<BufWriter<File>> {
    pub fn create(path: &Path, header: TraceHeader) -> Result<Self, TraceError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = File::create(path)?;
        Self::new(BufWriter::new(file), header)
    }
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut sink: W, header: TraceHeader) -> Result<Self, TraceError> {
        serde_json::to_writer(&mut sink, &header)
            .map_err(|e| TraceError::InvariantViolation(format!("unwritable header: {e}")))?;
        sink.write_all(b"\n")?;
        Ok(TraceWriter {
            sink,
            header,
            validator: EventValidator::new(),
            next_seq: 0,
            events: Vec::new(),
        })
    }

    /// Validate and append one event. One line per event; the event must
    /// carry the next sequence number (see `next_seq`).
    pub fn append(&mut self, event: TraceEvent) -> Result<(), TraceError> {
        if event.task_id != self.header.task_id {
            return Err(TraceError::InvariantViolation(format!(
                "event task id {} does not match trace task id {}",
                event.task_id, self.header.task_id
            )));
        }
        self.validator.check(&event)?;
        serde_json::to_writer(&mut self.sink, &event)
            .map_err(|e| TraceError::InvariantViolation(format!("unserializable event: {e}")))?;
        self.sink.write_all(b"\n")?;
        self.next_seq = event.seq + 1;
        self.events.push(event);
        Ok(())
    }

    /// Sequence number the next event should carry.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn flush(&mut self) -> Result<(), TraceError> {
        self.sink.flush()?;
        Ok(())
    }

    /// Write the derived-outcome trailer (when a task_result was recorded)
    /// and flush. Returns the outcome, if any.
    pub fn finish(mut self) -> Result<Option<TaskOutcome>, TraceError> {
        let outcome = if self.validator.has_result() {
            let outcome = derive_outcome(&self.events, self.header.spec_id.as_deref())?;
            serde_json::to_writer(&mut self.sink, &OutcomeLine { outcome: outcome.clone() })
                .map_err(|e| {
                    TraceError::InvariantViolation(format!("unserializable outcome: {e}"))
                })?;
            self.sink.write_all(b"\n")?;
            Some(outcome)
        } else {
            None
        };
        self.sink.flush()?;
        Ok(outcome)
    }
}

/// Destination for trace events. Implemented by file writers and by the
/// in-memory collector used by the simulator and tests.
pub trait EventSink {
    /// Sequence number the next event must carry.
    fn next_seq(&self) -> u64;
    fn append(&mut self, event: TraceEvent) -> Result<(), TraceError>;
}

impl<W: Write> EventSink for TraceWriter<W> {
    fn next_seq(&self) -> u64 {
        TraceWriter::next_seq(self)
    }

    fn append(&mut self, event: TraceEvent) -> Result<(), TraceError> {
        TraceWriter::append(self, event)
    }
}

/// In-memory event collector with the same invariant checks as a file
/// writer.
#[derive(Debug, Default)]
pub struct MemorySink {
    validator: EventValidator,
    next_seq: u64,
    events: Vec<TraceEvent>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<TraceEvent> {
        self.events
    }
}

impl EventSink for MemorySink {
    fn next_seq(&self) -> u64 {
        self.next_seq
    }

    fn append(&mut self, event: TraceEvent) -> Result<(), TraceError> {
        self.validator.check(&event)?;
        self.next_seq = event.seq + 1;
        self.events.push(event);
        Ok(())
    }
}

/// A replayed trace: header, validated events, and the re-derived outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayedTrace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
    pub outcome: Option<TaskOutcome>,
}

/// Replay a trace file, validating every invariant and re-deriving the
/// outcome. Corrupt lines are reported with their line number; a stored
/// outcome that disagrees with the re-derivation is corrupt.
pub fn replay(path: &Path) -> Result<ReplayedTrace, TraceError> {
    let file = File::open(path)?;
    replay_reader(BufReader::new(file))
}

pub fn replay_reader<R: Read>(reader: BufReader<R>) -> Result<ReplayedTrace, TraceError> {
    let mut lines = reader.lines().enumerate();

    let (_, header_line) = lines.next().ok_or(TraceError::Corrupt {
        line: 1,
        reason: "empty trace file".into(),
    })?;
    let header: TraceHeader =
        serde_json::from_str(&header_line?).map_err(|e| TraceError::Corrupt {
            line: 1,
            reason: format!("bad header: {e}"),
        })?;

    let mut validator = EventValidator::new();
    let mut events = Vec::new();
    let mut stored_outcome: Option<TaskOutcome> = None;

    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            return Err(TraceError::Corrupt {
                line: line_no,
                reason: "blank line inside trace".into(),
            });
        }
        if stored_outcome.is_some() {
            return Err(TraceError::Corrupt {
                line: line_no,
                reason: "content after outcome trailer".into(),
            });
        }
        if let Ok(trailer) = serde_json::from_str::<OutcomeLine>(&line) {
            stored_outcome = Some(trailer.outcome);
            continue;
        }
        let event: TraceEvent = serde_json::from_str(&line).map_err(|e| TraceError::Corrupt {
            line: line_no,
            reason: format!("bad event: {e}"),
        })?;
        if event.task_id != header.task_id {
            return Err(TraceError::Corrupt {
                line: line_no,
                reason: "event task id differs from header".into(),
            });
        }
        validator.check(&event).map_err(|e| TraceError::Corrupt {
            line: line_no,
            reason: e.to_string(),
        })?;
        events.push(event);
    }

    let derived = if validator.has_result() {
        Some(derive_outcome(&events, header.spec_id.as_deref())?)
    } else {
        None
    };
    if let Some(stored) = &stored_outcome {
        match &derived {
            Some(derived) if derived == stored => {}
            _ => {
                return Err(TraceError::Corrupt {
                    line: 0,
                    reason: "outcome mismatch: stored outcome disagrees with re-derivation"
                        .into(),
                });
            }
        }
    }

    Ok(ReplayedTrace {
        header,
        events,
        outcome: derived,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_events(task: &str) -> Vec<TraceEvent> {
        vec![
            TraceEvent::msg_sent(0, task, "user"),
            TraceEvent::msg_received(1, task, "planner"),
            TraceEvent::ft_triggered(2, task, FtTier::Rule),
            TraceEvent::ft_fixed(3, task, FtTier::Rule),
            TraceEvent::task_result(4, task, true),
        ]
    }

    #[test]
    fn first_event_seq_zero_accepted() {
        let mut v = EventValidator::new();
        assert!(v.check(&TraceEvent::msg_sent(0, "t", "a")).is_ok());
    }

    #[test]
    fn ft_fixed_without_trigger_rejected() {
        let mut v = EventValidator::new();
        let err = v
            .check(&TraceEvent::ft_fixed(0, "t", FtTier::Reasoning))
            .unwrap_err();
        assert!(matches!(err, TraceError::InvariantViolation(_)));
    }

    #[test]
    fn duplicate_task_result_rejected() {
        let mut v = EventValidator::new();
        v.check(&TraceEvent::task_result(0, "t", true)).unwrap();
        let err = v.check(&TraceEvent::task_result(1, "t", true)).unwrap_err();
        assert!(matches!(err, TraceError::InvariantViolation(_)));
    }

    #[test]
    fn non_increasing_seq_rejected() {
        let mut v = EventValidator::new();
        v.check(&TraceEvent::msg_sent(3, "t", "a")).unwrap();
        assert!(v.check(&TraceEvent::msg_sent(3, "t", "a")).is_err());
        assert!(v.check(&TraceEvent::msg_sent(2, "t", "a")).is_err());
    }

    #[test]
    fn write_then_replay_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t1.jsonl");
        let mut writer =
            TraceWriter::create(&path, TraceHeader::new(42, "t1")).unwrap();
        let events = sample_events("t1");
        for ev in &events {
            writer.append(ev.clone()).unwrap();
        }
        let outcome = writer.finish().unwrap().unwrap();
        assert!(outcome.success);
        assert_eq!(outcome.ft_summary[&FtTier::Rule].triggered, 1);

        let replayed = replay(&path).unwrap();
        assert_eq!(replayed.events, events);
        assert_eq!(replayed.outcome, Some(outcome));
    }

    #[test]
    fn truncated_final_line_is_corrupt_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t1.jsonl");
        let mut writer =
            TraceWriter::create(&path, TraceHeader::new(42, "t1")).unwrap();
        for ev in sample_events("t1") {
            writer.append(ev).unwrap();
        }
        writer.finish().unwrap();

        let content = std::fs::read_to_string(&path).unwrap();
        let truncated: String = content[..content.len() - 10].to_string();
        std::fs::write(&path, truncated).unwrap();

        match replay(&path) {
            Err(TraceError::Corrupt { line, .. }) => assert!(line > 1),
            other => panic!("expected corrupt trace, got {other:?}"),
        }
    }

    #[test]
    fn flipped_outcome_flag_detected_on_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t1.jsonl");
        let mut writer =
            TraceWriter::create(&path, TraceHeader::new(42, "t1")).unwrap();
        for ev in sample_events("t1") {
            writer.append(ev).unwrap();
        }
        writer.finish().unwrap();

        // Tamper: flip the success flag in the stored outcome trailer only.
        let content = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = content.lines().map(str::to_string).collect();
        let last = lines.last_mut().unwrap();
        assert!(last.contains("\"outcome\""));
        *last = last.replace("\"success\":true", "\"success\":false");
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();

        match replay(&path) {
            Err(TraceError::Corrupt { reason, .. }) => {
                assert!(reason.contains("outcome mismatch"), "{reason}");
            }
            other => panic!("expected outcome mismatch, got {other:?}"),
        }
    }

    #[test]
    fn trace_without_result_replays_with_no_outcome() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t1.jsonl");
        let mut writer =
            TraceWriter::create(&path, TraceHeader::new(42, "t1")).unwrap();
        writer.append(TraceEvent::msg_sent(0, "t1", "a")).unwrap();
        writer.finish().unwrap();
        let replayed = replay(&path).unwrap();
        assert!(replayed.outcome.is_none());
        assert_eq!(replayed.events.len(), 1);
    }

    #[test]
    fn fault_applicable_flag_flows_into_outcome() {
        let events = vec![TraceEvent::task_result(0, "t", false)
            .with_detail("fault_applicable", serde_json::Value::Bool(false))];
        let outcome = derive_outcome(&events, Some("f1")).unwrap();
        assert!(!outcome.fault_applicable);
        assert_eq!(outcome.spec_id.as_deref(), Some("f1"));
    }
}
