//! The fault catalog: fifteen injectable fault types, the seven categories
//! they fall into, and the injection mechanism each one is delivered through.
//!
//! The catalog is fixed. Every fault type maps to exactly one category and
//! exactly one mechanism; communication faults are delivered by routing
//! manipulation, configuration and instruction faults by prompt
//! modification, and the remaining intra-agent faults by interception and
//! response rewriting.

use serde::{Deserialize, Serialize};

/// One of the fifteen injectable fault types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultType {
    InexecutablePlan,
    CriticalInfoLoss,
    MemoryLoss,
    ContextLengthViolation,
    Hallucination,
    ToolSelectionError,
    ParameterFillingError,
    ParameterFormatError,
    RoleAmbiguity,
    BlindTrust,
    InstructionLogicConflict,
    InstructionAmbiguity,
    MessageCycle,
    MessageStorm,
    MessageBroadcastAmplification,
}

impl FaultType {
    /// All fault types in catalog order. Reports and renders iterate this
    /// order so output is deterministic.
    pub const CATALOG: [FaultType; 15] = [
        FaultType::InexecutablePlan,
        FaultType::CriticalInfoLoss,
        FaultType::MemoryLoss,
        FaultType::ContextLengthViolation,
        FaultType::Hallucination,
        FaultType::ToolSelectionError,
        FaultType::ParameterFillingError,
        FaultType::ParameterFormatError,
        FaultType::RoleAmbiguity,
        FaultType::BlindTrust,
        FaultType::InstructionLogicConflict,
        FaultType::InstructionAmbiguity,
        FaultType::MessageCycle,
        FaultType::MessageStorm,
        FaultType::MessageBroadcastAmplification,
    ];

    pub fn category(self) -> FaultCategory {
        match self {
            FaultType::InexecutablePlan | FaultType::CriticalInfoLoss => FaultCategory::Planning,
            FaultType::MemoryLoss | FaultType::ContextLengthViolation => FaultCategory::Memory,
            FaultType::Hallucination => FaultCategory::Reasoning,
            FaultType::ToolSelectionError
            | FaultType::ParameterFillingError
            | FaultType::ParameterFormatError => FaultCategory::Action,
            FaultType::RoleAmbiguity | FaultType::BlindTrust => FaultCategory::Configuration,
            FaultType::InstructionLogicConflict | FaultType::InstructionAmbiguity => {
                FaultCategory::Instruction
            }
            FaultType::MessageCycle
            | FaultType::MessageStorm
            | FaultType::MessageBroadcastAmplification => FaultCategory::Communication,
        }
    }

    pub fn mechanism(self) -> InjectionMechanism {
        mechanism_of(self)
    }

    /// The execution point where this fault is applied. Communication
    /// faults operate on the message bus and have no interception point.
    pub fn interception_point(self) -> Option<InterceptionPoint> {
        match self.category() {
            FaultCategory::Configuration => Some(InterceptionPoint::SystemPromptInit),
            FaultCategory::Instruction => Some(InterceptionPoint::UserPromptIngress),
            FaultCategory::Memory => Some(InterceptionPoint::HistoryWindowIngress),
            FaultCategory::Planning | FaultCategory::Reasoning => {
                Some(InterceptionPoint::AgentOutputEgress)
            }
            FaultCategory::Action => Some(InterceptionPoint::ToolCallEgress),
            FaultCategory::Communication => None,
        }
    }

    /// Semantic fault types may be delegated to an LLM-backed injector.
    pub fn is_semantic(self) -> bool {
        matches!(
            self,
            FaultType::InexecutablePlan
                | FaultType::CriticalInfoLoss
                | FaultType::Hallucination
                | FaultType::ToolSelectionError
                | FaultType::ParameterFillingError
                | FaultType::InstructionLogicConflict
                | FaultType::InstructionAmbiguity
        )
    }

    /// Stable snake_case name, matching the wire/config spelling.
    pub fn name(self) -> &'static str {
        match self {
            FaultType::InexecutablePlan => "inexecutable_plan",
            FaultType::CriticalInfoLoss => "critical_info_loss",
            FaultType::MemoryLoss => "memory_loss",
            FaultType::ContextLengthViolation => "context_length_violation",
            FaultType::Hallucination => "hallucination",
            FaultType::ToolSelectionError => "tool_selection_error",
            FaultType::ParameterFillingError => "parameter_filling_error",
            FaultType::ParameterFormatError => "parameter_format_error",
            FaultType::RoleAmbiguity => "role_ambiguity",
            FaultType::BlindTrust => "blind_trust",
            FaultType::InstructionLogicConflict => "instruction_logic_conflict",
            FaultType::InstructionAmbiguity => "instruction_ambiguity",
            FaultType::MessageCycle => "message_cycle",
            FaultType::MessageStorm => "message_storm",
            FaultType::MessageBroadcastAmplification => "message_broadcast_amplification",
        }
    }
}

/// Where in the agent pipeline a fault class arises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultCategory {
    Planning,
    Memory,
    Reasoning,
    Action,
    Configuration,
    Instruction,
    Communication,
}

impl FaultCategory {
    /// Intra-agent categories arise inside one agent's own pipeline;
    /// inter-agent categories disrupt coordination across agents.
    pub fn locus(self) -> Locus {
        match self {
            FaultCategory::Planning
            | FaultCategory::Memory
            | FaultCategory::Reasoning
            | FaultCategory::Action => Locus::Intra,
            FaultCategory::Configuration
            | FaultCategory::Instruction
            | FaultCategory::Communication => Locus::Inter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Locus {
    Intra,
    Inter,
}

/// The three delivery mechanisms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMechanism {
    PromptModification,
    InterceptionRewrite,
    RoutingManipulation,
}

/// Total mapping from fault type to injection mechanism.
pub fn mechanism_of(fault_type: FaultType) -> InjectionMechanism {
    match fault_type.category() {
        FaultCategory::Communication => InjectionMechanism::RoutingManipulation,
        FaultCategory::Configuration | FaultCategory::Instruction => {
            InjectionMechanism::PromptModification
        }
        FaultCategory::Planning
        | FaultCategory::Memory
        | FaultCategory::Reasoning
        | FaultCategory::Action => InjectionMechanism::InterceptionRewrite,
    }
}

/// A position in the request/response/history flow where mutations apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterceptionPoint {
    SystemPromptInit,
    UserPromptIngress,
    HistoryWindowIngress,
    AgentOutputEgress,
    ToolCallEgress,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_fifteen_distinct_types() {
        let mut seen = std::collections::BTreeSet::new();
        for ft in FaultType::CATALOG {
            seen.insert(ft);
        }
        assert_eq!(seen.len(), 15);
    }

    #[test]
    fn mechanism_examples() {
        assert_eq!(
            mechanism_of(FaultType::RoleAmbiguity),
            InjectionMechanism::PromptModification
        );
        assert_eq!(
            mechanism_of(FaultType::Hallucination),
            InjectionMechanism::InterceptionRewrite
        );
        assert_eq!(
            mechanism_of(FaultType::MessageStorm),
            InjectionMechanism::RoutingManipulation
        );
    }

    #[test]
    fn mechanism_consistent_with_category_table() {
        for ft in FaultType::CATALOG {
            let expected = match ft.category() {
                FaultCategory::Communication => InjectionMechanism::RoutingManipulation,
                FaultCategory::Configuration | FaultCategory::Instruction => {
                    InjectionMechanism::PromptModification
                }
                _ => InjectionMechanism::InterceptionRewrite,
            };
            assert_eq!(mechanism_of(ft), expected);
        }
    }

    #[test]
    fn locus_partition() {
        let intra: Vec<_> = FaultType::CATALOG
            .iter()
            .filter(|ft| ft.category().locus() == Locus::Intra)
            .collect();
        let inter: Vec<_> = FaultType::CATALOG
            .iter()
            .filter(|ft| ft.category().locus() == Locus::Inter)
            .collect();
        assert_eq!(intra.len(), 8);
        assert_eq!(inter.len(), 7);
    }

    #[test]
    fn interception_points_follow_category() {
        assert_eq!(
            FaultType::BlindTrust.interception_point(),
            Some(InterceptionPoint::SystemPromptInit)
        );
        assert_eq!(
            FaultType::InstructionAmbiguity.interception_point(),
            Some(InterceptionPoint::UserPromptIngress)
        );
        assert_eq!(
            FaultType::MemoryLoss.interception_point(),
            Some(InterceptionPoint::HistoryWindowIngress)
        );
        assert_eq!(
            FaultType::Hallucination.interception_point(),
            Some(InterceptionPoint::AgentOutputEgress)
        );
        assert_eq!(
            FaultType::ParameterFormatError.interception_point(),
            Some(InterceptionPoint::ToolCallEgress)
        );
        assert_eq!(FaultType::MessageCycle.interception_point(), None);
    }

    #[test]
    fn names_round_trip_through_serde() {
        for ft in FaultType::CATALOG {
            let json = serde_json::to_string(&ft).unwrap();
            assert_eq!(json, format!("\"{}\"", ft.name()));
            let back: FaultType = serde_json::from_str(&json).unwrap();
            assert_eq!(back, ft);
        }
    }
}
