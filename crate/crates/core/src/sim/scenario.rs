//! Simulation scenarios: a topology plus per-agent behavior policies.
//!
//! Scripted agents draw detection/repair outcomes from per-(task, agent)
//! RNG streams, which gives every metric a closed-form expectation. The
//! three shipped presets mirror the common coordination paradigms: an
//! ordered pipeline with a shared message pool, a generator/judge/refiner
//! loop, and a two-party negotiation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::trace::FtTier;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Ordered agent chain; with `shared_pool`, every delivered payload is
    /// also retained in a globally readable pool that guarantees repair
    /// after detection.
    LinearPipeline {
        agents: Vec<String>,
        #[serde(default)]
        shared_pool: bool,
    },
    /// Generator output is validated by a judge; on detection a refiner is
    /// invoked, up to `max_iterations` cycles.
    CriticRefineLoop {
        generator: String,
        judge: String,
        refiner: String,
        #[serde(default = "default_max_iterations")]
        max_iterations: u32,
    },
    /// Two agents alternate turns; the task succeeds when the assistant
    /// reaches the goal within the turn limit.
    BilateralNegotiation {
        user_agent: String,
        assistant_agent: String,
        #[serde(default = "default_turn_limit")]
        turn_limit: u32,
        #[serde(default = "default_goal_turn")]
        goal_turn: u32,
    },
}

fn default_max_iterations() -> u32 {
    3
}

fn default_turn_limit() -> u32 {
    10
}

fn default_goal_turn() -> u32 {
    2
}

impl Topology {
    /// Agent ids in processing order.
    pub fn agent_ids(&self) -> Vec<String> {
        match self {
            Topology::LinearPipeline { agents, .. } => agents.clone(),
            Topology::CriticRefineLoop {
                generator,
                judge,
                refiner,
                ..
            } => vec![generator.clone(), judge.clone(), refiner.clone()],
            Topology::BilateralNegotiation {
                user_agent,
                assistant_agent,
                ..
            } => vec![user_agent.clone(), assistant_agent.clone()],
        }
    }
}

/// Scripted behavior policy for one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentPolicy {
    pub role: Option<String>,
    /// Probability of recognizing an injected fault in its input.
    pub p_detect: f64,
    /// Probability of local repair given detection.
    pub p_fix: f64,
    pub p_succ_given_fix: f64,
    pub p_succ_given_unfixed: f64,
    /// Tier its detection/repair events carry.
    pub tier_label: FtTier,
    /// Dedup filter on the receiving side (content digest + sender).
    pub dedup: bool,
    /// `None` accepts messages from every sender; otherwise only listed
    /// senders pass the subscription filter.
    pub subscriptions: Option<BTreeSet<String>>,
    /// Self-delivery bound before the cycle guard trips; `None` disables
    /// the guard and leaves cyclic traffic to agent-level reasoning.
    pub loop_guard_max_hops: Option<u32>,
}

impl Default for AgentPolicy {
    fn default() -> Self {
        AgentPolicy {
            role: None,
            p_detect: 1.0,
            p_fix: 1.0,
            p_succ_given_fix: 1.0,
            p_succ_given_unfixed: 0.0,
            tier_label: FtTier::Reasoning,
            dedup: true,
            subscriptions: None,
            loop_guard_max_hops: Some(8),
        }
    }
}

fn default_schema_version() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub topology: Topology,
    #[serde(default)]
    pub agents: BTreeMap<String, AgentPolicy>,
}

impl ScenarioConfig {
    pub fn from_path(path: &Path) -> Result<ScenarioConfig, String> {
        let raw = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let scenario: ScenarioConfig =
            serde_json::from_str(&raw).map_err(|e| format!("{}: {e}", path.display()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn policy(&self, agent_id: &str) -> AgentPolicy {
        self.agents.get(agent_id).cloned().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != 1 {
            return Err(format!(
                "unsupported scenario schema_version {}",
                self.schema_version
            ));
        }
        match &self.topology {
            Topology::LinearPipeline { agents, .. } => {
                if agents.len() < 2 {
                    return Err("linear pipeline needs at least 2 agents".into());
                }
                let unique: BTreeSet<_> = agents.iter().collect();
                if unique.len() != agents.len() {
                    return Err("linear pipeline agent ids must be distinct".into());
                }
            }
            Topology::CriticRefineLoop {
                generator,
                judge,
                refiner,
                max_iterations,
            } => {
                if *max_iterations < 1 {
                    return Err("critic-refine loop needs max_iterations >= 1".into());
                }
                let unique: BTreeSet<_> = [generator, judge, refiner].into_iter().collect();
                if unique.len() != 3 {
                    return Err("critic-refine loop agent ids must be distinct".into());
                }
            }
            Topology::BilateralNegotiation {
                user_agent,
                assistant_agent,
                turn_limit,
                goal_turn,
            } => {
                if *turn_limit < 1 {
                    return Err("bilateral negotiation needs turn_limit >= 1".into());
                }
                if *goal_turn < 1 {
                    return Err("bilateral negotiation needs goal_turn >= 1".into());
                }
                if user_agent == assistant_agent {
                    return Err("bilateral negotiation agent ids must be distinct".into());
                }
            }
        }
        for (id, policy) in &self.agents {
            for (name, p) in [
                ("p_detect", policy.p_detect),
                ("p_fix", policy.p_fix),
                ("p_succ_given_fix", policy.p_succ_given_fix),
                ("p_succ_given_unfixed", policy.p_succ_given_unfixed),
            ] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(format!("agent {id}: {name}={p} outside [0, 1]"));
                }
            }
        }
        Ok(())
    }
}

/// Shipped scenario presets.
pub fn preset_scenario(name: &str) -> Option<ScenarioConfig> {
    match name {
        "linear_pipeline" => {
            let mut agents = BTreeMap::new();
            for (id, role) in [
                ("planner", "Planner"),
                ("coder", "Coder"),
                ("tester", "Tester"),
            ] {
                agents.insert(
                    id.to_string(),
                    AgentPolicy {
                        role: Some(role.to_string()),
                        ..AgentPolicy::default()
                    },
                );
            }
            Some(ScenarioConfig {
                schema_version: 1,
                topology: Topology::LinearPipeline {
                    agents: vec!["planner".into(), "coder".into(), "tester".into()],
                    shared_pool: true,
                },
                agents,
            })
        }
        "critic_refine_loop" => {
            let mut agents = BTreeMap::new();
            agents.insert(
                "generator".to_string(),
                AgentPolicy {
                    role: Some("Generator".into()),
                    ..AgentPolicy::default()
                },
            );
            agents.insert(
                "judge".to_string(),
                AgentPolicy {
                    role: Some("Judge".into()),
                    tier_label: FtTier::Mechanism,
                    ..AgentPolicy::default()
                },
            );
            agents.insert(
                "refiner".to_string(),
                AgentPolicy {
                    role: Some("Refiner".into()),
                    ..AgentPolicy::default()
                },
            );
            Some(ScenarioConfig {
                schema_version: 1,
                topology: Topology::CriticRefineLoop {
                    generator: "generator".into(),
                    judge: "judge".into(),
                    refiner: "refiner".into(),
                    max_iterations: 3,
                },
                agents,
            })
        }
        "bilateral_negotiation" => {
            let mut agents = BTreeMap::new();
            agents.insert(
                "user".to_string(),
                AgentPolicy {
                    role: Some("Instructor".into()),
                    ..AgentPolicy::default()
                },
            );
            agents.insert(
                "assistant".to_string(),
                AgentPolicy {
                    role: Some("Assistant".into()),
                    ..AgentPolicy::default()
                },
            );
            Some(ScenarioConfig {
                schema_version: 1,
                topology: Topology::BilateralNegotiation {
                    user_agent: "user".into(),
                    assistant_agent: "assistant".into(),
                    turn_limit: 10,
                    goal_turn: 2,
                },
                agents,
            })
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ["linear_pipeline", "critic_refine_loop", "bilateral_negotiation"] {
            let scenario = preset_scenario(name).unwrap();
            scenario.validate().unwrap();
        }
        assert!(preset_scenario("nonexistent").is_none());
    }

    #[test]
    fn single_agent_pipeline_rejected() {
        let scenario = ScenarioConfig {
            schema_version: 1,
            topology: Topology::LinearPipeline {
                agents: vec!["solo".into()],
                shared_pool: false,
            },
            agents: BTreeMap::new(),
        };
        assert!(scenario.validate().is_err());
    }

    #[test]
    fn out_of_range_probability_rejected() {
        let mut agents = BTreeMap::new();
        agents.insert(
            "a".to_string(),
            AgentPolicy {
                p_detect: 1.5,
                ..AgentPolicy::default()
            },
        );
        let scenario = ScenarioConfig {
            schema_version: 1,
            topology: Topology::LinearPipeline {
                agents: vec!["a".into(), "b".into()],
                shared_pool: false,
            },
            agents,
        };
        assert!(scenario.validate().is_err());
    }

    #[test]
    fn scenario_round_trips_through_serde() {
        let scenario = preset_scenario("critic_refine_loop").unwrap();
        let json = serde_json::to_string(&scenario).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, scenario);
    }
}
