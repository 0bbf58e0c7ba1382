//! Campaign configuration: the single reviewable file that fully describes
//! an experiment. Parsing is strict — unknown keys are schema errors — and
//! round-trips losslessly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::injector::{
    DeterministicInjector, FixtureEndpoint, HttpEndpoint, InjectorEndpoint, TemplateCatalog,
};
use crate::rewrite::ToolCallData;
use crate::rng::spec_task_seed;
use crate::sim::scenario::{preset_scenario, ScenarioConfig};
use crate::spec::{validate_spec, FaultSpec};

pub const CAMPAIGN_SCHEMA_VERSION: u32 = 1;

/// One task: an id and its input payload. Tasks without a tool invocation
/// are inapplicable targets for action faults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDescriptor {
    pub id: String,
    pub input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCallData>,
}

/// How the gateway maps an incoming request to an agent id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentMapping {
    Header { name: String },
    SystemPromptPrefix { patterns: Vec<PrefixPattern> },
}

impl Default for AgentMapping {
    fn default() -> Self {
        AgentMapping::Header {
            name: "x-mas-agent".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefixPattern {
    pub pattern: String,
    pub agent: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorTarget {
    /// Name of a shipped scenario preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Inline scenario definition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    /// Path to a scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayTarget {
    pub upstream: String,
    #[serde(default)]
    pub agent_mapping: AgentMapping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionTarget {
    Simulator(SimulatorTarget),
    Gateway(GatewayTarget),
}

/// Which injector endpoint performs delegated mutations. The identity is
/// recorded in manifests and reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectorConfig {
    Deterministic,
    Fixture { path: PathBuf },
    Http { base_url: String, model: String },
}

impl Default for InjectorConfig {
    fn default() -> Self {
        InjectorConfig::Deterministic
    }
}

impl InjectorConfig {
    pub fn identity(&self) -> String {
        match self {
            InjectorConfig::Deterministic => "deterministic".into(),
            InjectorConfig::Fixture { path } => format!("fixture:{}", path.display()),
            InjectorConfig::Http { base_url, model } => format!("{model}@{base_url}"),
        }
    }

    pub fn build(&self) -> Result<Box<dyn InjectorEndpoint>, CampaignError> {
        match self {
            InjectorConfig::Deterministic => Ok(Box::new(DeterministicInjector::new())),
            InjectorConfig::Fixture { path } => Ok(Box::new(
                FixtureEndpoint::from_path(path)
                    .map_err(|e| CampaignError::Validation(vec![e.to_string()]))?,
            )),
            InjectorConfig::Http { base_url, model } => {
                Ok(Box::new(HttpEndpoint::new(base_url, model)))
            }
        }
    }
}

fn default_max_retries() -> u32 {
    2
}

/// A full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub schema_version: u32,
    pub campaign_seed: u64,
    pub tasks: Vec<TaskDescriptor>,
    pub fault_specs: Vec<FaultSpec>,
    pub execution_target: ExecutionTarget,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_ref: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub injector: InjectorConfig,
    /// Bounded re-executions for delegated mutations that fail integrity
    /// checks.
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Optional override for the shipped template catalog.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_catalog: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error("malformed campaign document: {0}")]
    Parse(String),
    #[error("campaign schema error: {0}")]
    Schema(String),
    #[error("campaign validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
}

impl CampaignConfig {
    /// Effective seed for one (spec, task) pair: the spec's explicit seed,
    /// or hash(campaign_seed, spec id, task id).
    pub fn effective_seed(&self, spec: &FaultSpec, task_id: &str) -> u64 {
        spec.seed
            .unwrap_or_else(|| spec_task_seed(self.campaign_seed, &spec.id, task_id))
    }

    pub fn load_template_catalog(&self) -> Result<TemplateCatalog, CampaignError> {
        match &self.template_catalog {
            None => Ok(TemplateCatalog::builtin()),
            Some(path) => TemplateCatalog::from_path(path)
                .map_err(|e| CampaignError::Validation(vec![e.to_string()])),
        }
    }

    /// Resolve the simulator scenario (preset, inline, or file). Errors when
    /// the target is the gateway.
    pub fn resolve_scenario(&self) -> Result<ScenarioConfig, CampaignError> {
        let target = match &self.execution_target {
            ExecutionTarget::Simulator(target) => target,
            ExecutionTarget::Gateway(_) => {
                return Err(CampaignError::Validation(vec![
                    "execution target is a gateway, not a simulator".into(),
                ]))
            }
        };
        let scenario = match (&target.preset, &target.scenario, &target.scenario_path) {
            (Some(name), None, None) => preset_scenario(name).ok_or_else(|| {
                CampaignError::Validation(vec![format!("unknown scenario preset: {name}")])
            })?,
            (None, Some(inline), None) => inline.clone(),
            (None, None, Some(path)) => ScenarioConfig::from_path(path)
                .map_err(|e| CampaignError::Validation(vec![e.to_string()]))?,
            _ => {
                return Err(CampaignError::Validation(vec![
                    "simulator target takes exactly one of preset / scenario / scenario_path"
                        .into(),
                ]))
            }
        };
        scenario
            .validate()
            .map_err(|e| CampaignError::Validation(vec![e]))?;
        Ok(scenario)
    }
}

/// Parse and fully validate a campaign file. All defaults (fault modes, the
/// injector, retry budget) are materialized in the returned config.
pub fn parse_campaign(raw: &[u8]) -> Result<CampaignConfig, CampaignError> {
    let mut config: CampaignConfig = match serde_json::from_slice(raw) {
        Ok(config) => config,
        Err(err) => {
            return Err(match err.classify() {
                serde_json::error::Category::Syntax
                | serde_json::error::Category::Eof
                | serde_json::error::Category::Io => CampaignError::Parse(err.to_string()),
                serde_json::error::Category::Data => CampaignError::Schema(err.to_string()),
            })
        }
    };
    if config.schema_version != CAMPAIGN_SCHEMA_VERSION {
        return Err(CampaignError::Schema(format!(
            "unsupported schema_version {} (expected {CAMPAIGN_SCHEMA_VERSION})",
            config.schema_version
        )));
    }

    let mut issues = Vec::new();

    let mut task_ids = std::collections::BTreeSet::new();
    for task in &config.tasks {
        if !task_ids.insert(task.id.clone()) {
            issues.push(format!("duplicate task id: {}", task.id));
        }
        if task.id.is_empty() {
            issues.push("empty task id".into());
        }
    }

    let mut spec_ids = std::collections::BTreeSet::new();
    for spec in &config.fault_specs {
        if !spec_ids.insert(spec.id.clone()) {
            issues.push(format!("duplicate spec id: {}", spec.id));
        }
        if spec.id.is_empty() {
            issues.push("empty spec id".into());
        }
        for violation in validate_spec(spec) {
            issues.push(format!("spec {}: {violation}", spec.id));
        }
    }

    match &config.execution_target {
        ExecutionTarget::Simulator(target) => {
            let provided = [
                target.preset.is_some(),
                target.scenario.is_some(),
                target.scenario_path.is_some(),
            ]
            .iter()
            .filter(|p| **p)
            .count();
            if provided != 1 {
                issues.push(
                    "simulator target takes exactly one of preset / scenario / scenario_path"
                        .into(),
                );
            }
            if let Some(inline) = &target.scenario {
                if let Err(e) = inline.validate() {
                    issues.push(e);
                }
            }
            if let Some(name) = &target.preset {
                if preset_scenario(name).is_none() {
                    issues.push(format!("unknown scenario preset: {name}"));
                }
            }
        }
        ExecutionTarget::Gateway(target) => {
            if target.upstream.is_empty() {
                issues.push("gateway upstream endpoint is empty".into());
            }
        }
    }

    if !issues.is_empty() {
        return Err(CampaignError::Validation(issues));
    }

    for spec in &mut config.fault_specs {
        spec.mode = Some(spec.effective_mode());
    }
    Ok(config)
}

pub fn parse_campaign_file(path: &Path) -> Result<CampaignConfig, CampaignError> {
    let raw = std::fs::read(path)
        .map_err(|e| CampaignError::Parse(format!("{}: {e}", path.display())))?;
    parse_campaign(&raw)
}

/// Serialize a config such that `parse_campaign(serialize_campaign(c)) == c`.
pub fn serialize_campaign(config: &CampaignConfig) -> Vec<u8> {
    serde_json::to_vec_pretty(config).expect("campaign config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{FaultParams, TargetSelector};
    use crate::taxonomy::FaultType;

    fn minimal_doc() -> serde_json::Value {
        serde_json::json!({
            "schema_version": 1,
            "campaign_seed": 42,
            "tasks": [{"id": "t1", "input": "Sort by revenue descending"}],
            "fault_specs": [{
                "id": "f1",
                "fault_type": "message_storm",
                "target": {"edge": {"sender": "planner", "recipient": "coder"}},
                "params": {"replication_factor": 5}
            }],
            "execution_target": {"simulator": {"preset": "linear_pipeline"}},
            "output_dir": "out"
        })
    }

    #[test]
    fn minimal_document_parses() {
        let raw = serde_json::to_vec(&minimal_doc()).unwrap();
        let config = parse_campaign(&raw).unwrap();
        assert_eq!(config.tasks.len(), 1);
        assert_eq!(config.fault_specs.len(), 1);
        // Defaults materialized.
        assert!(config.fault_specs[0].mode.is_some());
        assert_eq!(config.max_retries, 2);
        assert_eq!(config.injector, InjectorConfig::Deterministic);
    }

    #[test]
    fn missing_campaign_seed_is_schema_error() {
        let mut doc = minimal_doc();
        doc.as_object_mut().unwrap().remove("campaign_seed");
        let raw = serde_json::to_vec(&doc).unwrap();
        assert!(matches!(parse_campaign(&raw), Err(CampaignError::Schema(_))));
    }

    #[test]
    fn unknown_key_is_schema_error() {
        let mut doc = minimal_doc();
        doc.as_object_mut()
            .unwrap()
            .insert("surprise".into(), serde_json::json!(1));
        let raw = serde_json::to_vec(&doc).unwrap();
        assert!(matches!(parse_campaign(&raw), Err(CampaignError::Schema(_))));
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(
            parse_campaign(b"{not json"),
            Err(CampaignError::Parse(_))
        ));
    }

    #[test]
    fn duplicate_spec_ids_rejected() {
        let mut doc = minimal_doc();
        let spec = doc["fault_specs"][0].clone();
        doc["fault_specs"].as_array_mut().unwrap().push(spec);
        let raw = serde_json::to_vec(&doc).unwrap();
        match parse_campaign(&raw) {
            Err(CampaignError::Validation(issues)) => {
                assert!(issues.iter().any(|i| i.contains("duplicate spec id")));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn spec_violations_surface_as_validation_errors() {
        let mut doc = minimal_doc();
        doc["fault_specs"][0]["params"]["replication_factor"] = serde_json::json!(1);
        let raw = serde_json::to_vec(&doc).unwrap();
        assert!(matches!(
            parse_campaign(&raw),
            Err(CampaignError::Validation(_))
        ));
    }

    #[test]
    fn round_trip_is_lossless() {
        let raw = serde_json::to_vec(&minimal_doc()).unwrap();
        let config = parse_campaign(&raw).unwrap();
        let reparsed = parse_campaign(&serialize_campaign(&config)).unwrap();
        assert_eq!(config, reparsed);
    }

    #[test]
    fn effective_seed_prefers_explicit_seed() {
        let raw = serde_json::to_vec(&minimal_doc()).unwrap();
        let config = parse_campaign(&raw).unwrap();
        let spec = &config.fault_specs[0];
        let derived = config.effective_seed(spec, "t1");
        assert_eq!(derived, spec_task_seed(42, "f1", "t1"));

        let pinned = FaultSpec {
            id: "f2".into(),
            fault_type: FaultType::MessageStorm,
            target: TargetSelector::Edge {
                sender: "a".into(),
                recipient: "b".into(),
            },
            params: FaultParams {
                replication_factor: Some(2),
                ..FaultParams::default()
            },
            mode: None,
            seed: Some(7),
        };
        assert_eq!(config.effective_seed(&pinned, "t1"), 7);
    }

    #[test]
    fn simulator_target_requires_exactly_one_scenario_source() {
        let mut doc = minimal_doc();
        doc["execution_target"]["simulator"]["scenario_path"] = serde_json::json!("extra.json");
        let raw = serde_json::to_vec(&doc).unwrap();
        assert!(matches!(
            parse_campaign(&raw),
            Err(CampaignError::Validation(_))
        ));
    }
}
