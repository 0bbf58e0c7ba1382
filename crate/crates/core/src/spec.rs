//! Fault specifications: one injectable fault with its target, parameters,
//! mode, and seed, plus the validation rules that keep a campaign coherent.

use serde::{Deserialize, Serialize};

use crate::taxonomy::{FaultType, InjectionMechanism};

/// What a fault spec is aimed at. Routing faults target a bus edge, all
/// other faults target an agent. `"*"` acts as a wildcard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSelector {
    Agent { agent: String },
    Edge { sender: String, recipient: String },
}

impl TargetSelector {
    pub fn matches_agent(&self, agent_id: &str) -> bool {
        match self {
            TargetSelector::Agent { agent } => agent == "*" || agent == agent_id,
            TargetSelector::Edge { .. } => false,
        }
    }

    pub fn matches_edge(&self, sender: &str, recipient: &str) -> bool {
        match self {
            TargetSelector::Edge {
                sender: s,
                recipient: r,
            } => (s == "*" || s == sender) && (r == "*" || r == recipient),
            TargetSelector::Agent { .. } => false,
        }
    }
}

/// Deterministic mutations run in-process; delegated mutations are produced
/// by an injector endpoint and gated by integrity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    Deterministic,
    Delegated,
}

/// Structure-level corruption applied to serialized tool-call payloads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    DropClosingDelimiter,
    RemoveRequiredField { field: String },
    TypeFlip { field: String },
}

/// Per-fault parameters. Which fields are required depends on the fault
/// type; `validate_spec` enforces the pairing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replication_factor: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drop_first_n: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drop_agent: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub char_budget: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corruption_kind: Option<CorruptionKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trusted_agent: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub secondary_role: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tool_catalog: Option<Vec<String>>,
}

/// One injectable fault.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub id: String,
    pub fault_type: FaultType,
    pub target: TargetSelector,
    #[serde(default)]
    pub params: FaultParams,
    /// Materialized during campaign parsing; `None` means "use the default
    /// for this fault type" (delegated for semantic faults, deterministic
    /// otherwise).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<FaultMode>,
    /// Per-spec seed override. `None` derives hash(campaign_seed, spec id,
    /// task id) so every task stays independently reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl FaultSpec {
    pub fn effective_mode(&self) -> FaultMode {
        self.mode.unwrap_or(default_mode(self.fault_type))
    }

    /// Deterministic runs of a fault the catalog treats as semantic are an
    /// offline fallback and get flagged as such in reports.
    pub fn offline_fallback(&self) -> bool {
        self.fault_type.is_semantic() && self.effective_mode() == FaultMode::Deterministic
    }
}

/// Default mode per fault type: semantic faults delegate, the rest run
/// deterministically.
pub fn default_mode(fault_type: FaultType) -> FaultMode {
    if fault_type.is_semantic() {
        FaultMode::Delegated
    } else {
        FaultMode::Deterministic
    }
}

/// A single rule violation found by `validate_spec`.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Violation {
    #[error("target kind incompatible with {mechanism:?}: {detail}")]
    MechanismMismatch {
        mechanism: InjectionMechanism,
        detail: String,
    },
    #[error("parameter makes the fault a no-op: {0}")]
    NoOpParameter(String),
    #[error("missing required parameter: {0}")]
    MissingParameter(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("mode not permitted: {0}")]
    ModeNotPermitted(String),
}

/// Check one fault spec against the catalog rules. Returns the list of
/// violations; an empty list means the spec is well-formed. Deterministic
/// and side-effect-free.
pub fn validate_spec(spec: &FaultSpec) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mechanism = spec.fault_type.mechanism();

    // Target kind must match the mechanism: bus edges for routing faults,
    // agents for everything else.
    match (&spec.target, mechanism) {
        (TargetSelector::Edge { .. }, InjectionMechanism::RoutingManipulation) => {}
        (TargetSelector::Agent { .. }, InjectionMechanism::RoutingManipulation) => {
            violations.push(Violation::MechanismMismatch {
                mechanism,
                detail: format!(
                    "{} is a routing fault and must target a bus edge, not an agent or prompt",
                    spec.fault_type.name()
                ),
            });
        }
        (TargetSelector::Edge { .. }, _) => {
            violations.push(Violation::MechanismMismatch {
                mechanism,
                detail: format!(
                    "{} does not operate on the bus and must target an agent",
                    spec.fault_type.name()
                ),
            });
        }
        (TargetSelector::Agent { .. }, _) => {}
    }

    match spec.effective_mode() {
        FaultMode::Delegated if !spec.fault_type.is_semantic() => {
            violations.push(Violation::ModeNotPermitted(format!(
                "{} is not a semantic fault and cannot be delegated",
                spec.fault_type.name()
            )));
        }
        FaultMode::Deterministic
            if matches!(
                spec.fault_type,
                FaultType::InexecutablePlan | FaultType::CriticalInfoLoss | FaultType::Hallucination
            ) =>
        {
            violations.push(Violation::ModeNotPermitted(format!(
                "{} has no deterministic mutation; use delegated mode",
                spec.fault_type.name()
            )));
        }
        _ => {}
    }

    let p = &spec.params;
    match spec.fault_type {
        FaultType::MessageStorm => match p.replication_factor {
            None => violations.push(Violation::MissingParameter("replication_factor".into())),
            Some(0) => violations.push(Violation::InvalidParameter(
                "replication_factor=0 drops the message instead of replicating it".into(),
            )),
            Some(1) => violations.push(Violation::NoOpParameter(
                "replication_factor=1 delivers the message exactly once".into(),
            )),
            Some(_) => {}
        },
        FaultType::MemoryLoss => match (p.drop_first_n, &p.drop_agent) {
            (None, None) => {
                violations.push(Violation::MissingParameter(
                    "memory_loss needs drop_first_n or drop_agent".into(),
                ));
            }
            (Some(_), Some(_)) => {
                violations.push(Violation::InvalidParameter(
                    "memory_loss takes exactly one of drop_first_n / drop_agent".into(),
                ));
            }
            (Some(0), None) => {
                violations.push(Violation::NoOpParameter(
                    "drop_first_n=0 removes nothing".into(),
                ));
            }
            (None, Some(agent)) if agent.is_empty() => {
                violations.push(Violation::InvalidParameter("drop_agent is empty".into()));
            }
            _ => {}
        },
        FaultType::ContextLengthViolation => match p.char_budget {
            None => violations.push(Violation::MissingParameter("char_budget".into())),
            Some(0) => violations.push(Violation::InvalidParameter(
                "char_budget must be positive".into(),
            )),
            Some(_) => {}
        },
        FaultType::ParameterFormatError => match &p.corruption_kind {
            None => violations.push(Violation::MissingParameter("corruption_kind".into())),
            Some(CorruptionKind::RemoveRequiredField { field })
            | Some(CorruptionKind::TypeFlip { field })
                if field.is_empty() =>
            {
                violations.push(Violation::InvalidParameter(
                    "corruption_kind field name is empty".into(),
                ));
            }
            Some(_) => {}
        },
        FaultType::RoleAmbiguity => match &p.secondary_role {
            None => violations.push(Violation::MissingParameter("secondary_role".into())),
            Some(role) if role.is_empty() => {
                violations.push(Violation::InvalidParameter("secondary_role is empty".into()));
            }
            Some(_) => {}
        },
        FaultType::BlindTrust => match &p.trusted_agent {
            None => violations.push(Violation::MissingParameter("trusted_agent".into())),
            Some(agent) if agent.is_empty() => {
                violations.push(Violation::InvalidParameter("trusted_agent is empty".into()));
            }
            Some(_) => {}
        },
        FaultType::ToolSelectionError if spec.effective_mode() == FaultMode::Deterministic => {
            match &p.tool_catalog {
                None => violations.push(Violation::MissingParameter(
                    "tool_catalog (deterministic tool swap needs the catalog)".into(),
                )),
                Some(catalog) if catalog.len() < 2 => {
                    violations.push(Violation::InvalidParameter(
                        "tool_catalog needs at least two tools".into(),
                    ));
                }
                Some(_) => {}
            }
        }
        _ => {}
    }

    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    fn storm_spec() -> FaultSpec {
        FaultSpec {
            id: "f1".into(),
            fault_type: FaultType::MessageStorm,
            target: TargetSelector::Edge {
                sender: "a".into(),
                recipient: "b".into(),
            },
            params: FaultParams {
                replication_factor: Some(5),
                ..FaultParams::default()
            },
            mode: None,
            seed: None,
        }
    }

    #[test]
    fn well_formed_storm_passes() {
        assert!(validate_spec(&storm_spec()).is_empty());
    }

    #[test]
    fn storm_targeting_prompt_is_mechanism_mismatch() {
        let mut spec = storm_spec();
        spec.target = TargetSelector::Agent { agent: "judge".into() };
        let violations = validate_spec(&spec);
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::MechanismMismatch { .. })));
    }

    #[test]
    fn zero_drop_memory_loss_is_noop() {
        let spec = FaultSpec {
            id: "f1".into(),
            fault_type: FaultType::MemoryLoss,
            target: TargetSelector::Agent { agent: "coder".into() },
            params: FaultParams {
                drop_first_n: Some(0),
                ..FaultParams::default()
            },
            mode: None,
            seed: None,
        };
        let violations = validate_spec(&spec);
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::NoOpParameter(_))));
    }

    #[test]
    fn delegated_mode_restricted_to_semantic_faults() {
        let mut spec = storm_spec();
        spec.mode = Some(FaultMode::Delegated);
        assert!(validate_spec(&spec)
            .iter()
            .any(|v| matches!(v, Violation::ModeNotPermitted(_))));
    }

    #[test]
    fn hallucination_has_no_deterministic_mode() {
        let spec = FaultSpec {
            id: "f1".into(),
            fault_type: FaultType::Hallucination,
            target: TargetSelector::Agent { agent: "coder".into() },
            params: FaultParams::default(),
            mode: Some(FaultMode::Deterministic),
            seed: None,
        };
        assert!(validate_spec(&spec)
            .iter()
            .any(|v| matches!(v, Violation::ModeNotPermitted(_))));
    }

    #[test]
    fn deterministic_tool_swap_requires_catalog() {
        let spec = FaultSpec {
            id: "f1".into(),
            fault_type: FaultType::ToolSelectionError,
            target: TargetSelector::Agent { agent: "coder".into() },
            params: FaultParams::default(),
            mode: Some(FaultMode::Deterministic),
            seed: None,
        };
        assert!(validate_spec(&spec)
            .iter()
            .any(|v| matches!(v, Violation::MissingParameter(_))));
    }

    #[test]
    fn offline_fallback_flag() {
        let mut spec = FaultSpec {
            id: "f1".into(),
            fault_type: FaultType::ParameterFillingError,
            target: TargetSelector::Agent { agent: "coder".into() },
            params: FaultParams::default(),
            mode: Some(FaultMode::Deterministic),
            seed: None,
        };
        assert!(spec.offline_fallback());
        spec.mode = Some(FaultMode::Delegated);
        assert!(!spec.offline_fallback());
        assert!(!storm_spec().offline_fallback());
    }

    #[test]
    fn validation_is_deterministic() {
        let spec = storm_spec();
        assert_eq!(validate_spec(&spec), validate_spec(&spec));
    }

    #[test]
    fn wildcard_target_matching() {
        let any = TargetSelector::Agent { agent: "*".into() };
        assert!(any.matches_agent("judge"));
        assert!(!any.matches_edge("a", "b"));
        let edge = TargetSelector::Edge {
            sender: "*".into(),
            recipient: "b".into(),
        };
        assert!(edge.matches_edge("anything", "b"));
        assert!(!edge.matches_edge("anything", "c"));
    }
}
