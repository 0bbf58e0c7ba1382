//! Fault plan derived from a campaign config: which specs fire at which
//! interception point, and how requests map to agent ids.

use std::collections::BTreeMap;

use faultline_core::campaign::{AgentMapping, CampaignConfig, ExecutionTarget};
use faultline_core::spec::FaultSpec;
use faultline_core::taxonomy::{InjectionMechanism, InterceptionPoint};

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("campaign does not target a gateway")]
    NotAGatewayCampaign,
}

/// Immutable after load; shared read-only across connections.
#[derive(Debug, Clone)]
pub struct FaultPlan {
    pub campaign_seed: u64,
    pub max_retries: u32,
    pub upstream: String,
    pub mapping: AgentMapping,
    pub by_point: BTreeMap<InterceptionPoint, Vec<FaultSpec>>,
    /// Routing faults cannot be injected at a point-to-point transport
    /// layer; they are listed here and never fire.
    pub inapplicable: Vec<String>,
}

impl FaultPlan {
    pub fn from_campaign(config: &CampaignConfig) -> Result<FaultPlan, PlanError> {
        let target = match &config.execution_target {
            ExecutionTarget::Gateway(target) => target,
            ExecutionTarget::Simulator(_) => return Err(PlanError::NotAGatewayCampaign),
        };
        let mut by_point: BTreeMap<InterceptionPoint, Vec<FaultSpec>> = BTreeMap::new();
        let mut inapplicable = Vec::new();
        for spec in &config.fault_specs {
            match spec.fault_type.interception_point() {
                Some(point) => by_point.entry(point).or_default().push(spec.clone()),
                None => {
                    debug_assert_eq!(
                        spec.fault_type.mechanism(),
                        InjectionMechanism::RoutingManipulation
                    );
                    inapplicable.push(spec.id.clone());
                }
            }
        }
        Ok(FaultPlan {
            campaign_seed: config.campaign_seed,
            max_retries: config.max_retries,
            upstream: target.upstream.trim_end_matches('/').to_string(),
            mapping: target.agent_mapping.clone(),
            by_point,
            inapplicable,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.by_point.values().all(|specs| specs.is_empty())
    }

    /// Specs at a point whose target matches the request's agent.
    pub fn matching(&self, point: InterceptionPoint, agent: &str) -> Vec<&FaultSpec> {
        self.by_point
            .get(&point)
            .map(|specs| {
                specs
                    .iter()
                    .filter(|s| s.target.matches_agent(agent))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Any spec at all for this agent, at any point.
    pub fn any_for_agent(&self, agent: &str) -> bool {
        self.by_point
            .values()
            .flatten()
            .any(|s| s.target.matches_agent(agent))
    }
}

/// Reserved id for requests no mapping rule claims.
pub const UNMAPPED_AGENT: &str = "unmapped";

/// Map a request to an agent id using the plan's declared mode. Never
/// fails: an unmatched request maps to the reserved "unmapped" id.
pub fn identify_agent(
    header_value: Option<&str>,
    system_prompt: Option<&str>,
    mapping: &AgentMapping,
) -> String {
    match mapping {
        AgentMapping::Header { .. } => match header_value {
            Some(value) if !value.is_empty() => value.to_string(),
            _ => UNMAPPED_AGENT.to_string(),
        },
        AgentMapping::SystemPromptPrefix { patterns } => {
            let Some(prompt) = system_prompt else {
                return UNMAPPED_AGENT.to_string();
            };
            let first_line = prompt.lines().next().unwrap_or("");
            for pattern in patterns {
                if prompt.starts_with(&pattern.pattern) || first_line.contains(&pattern.pattern) {
                    return pattern.agent.clone();
                }
            }
            UNMAPPED_AGENT.to_string()
        }
    }
}
