//! Client for delegating semantic mutations to a secondary model endpoint.
//!
//! Each semantic fault type has one template in a versioned catalog. The
//! `delegate` call sends the captured content to the endpoint, checks the
//! returned mutation against the template's integrity rules, and retries a
//! bounded number of times; every attempt is logged to the task trace.
//!
//! Three endpoint implementations ship with the toolkit: an HTTP client for
//! any chat-completions-compatible service, a fixture endpoint serving
//! canned responses keyed by request digest, and a deterministic in-process
//! injector that applies rule-satisfying text transforms for fully offline
//! runs.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::taxonomy::{FaultType, InterceptionPoint};
use crate::trace::{EventSink, TraceError, TraceEvent};

/// Words ignored when comparing content between original and mutated text.
/// The single-letter article is deliberately absent: every whitespace token
/// that is not on this list counts as a content word.
const STOPWORDS: [&str; 18] = [
    "the", "and", "or", "of", "to", "in", "on", "at", "by", "for", "with", "an", "is", "are",
    "be", "as", "it", "that",
];

fn is_stopword(word: &str) -> bool {
    STOPWORDS.contains(&word)
}

/// Lowercased whitespace-delimited tokens minus stopwords, with leading and
/// trailing punctuation trimmed.
pub fn content_words(text: &str) -> BTreeSet<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty() && !is_stopword(w))
        .collect()
}

/// A pure predicate over (original, mutated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrityCheck {
    /// At least this fraction of the original's distinct content words must
    /// survive into the mutated text.
    KeywordsRetained { min_fraction: f64 },
    /// The mutation must introduce something: a new content word in plain
    /// text, or a new/changed value at some path in a structured payload.
    ConstraintAdded,
    /// At least one original content word must be gone, and the mutated
    /// text must be non-empty and different from the original.
    TermsVagued,
    /// The mutated payload must parse as a structured object.
    SchemaParseable,
    /// Both payloads parse as objects and their name field differs.
    NameChanged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrityRule {
    pub id: String,
    pub check: IntegrityCheck,
}

fn flatten_json(prefix: &str, value: &serde_json::Value, out: &mut Vec<(String, String)>) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                flatten_json(&format!("{prefix}/{k}"), v, out);
            }
        }
        serde_json::Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten_json(&format!("{prefix}/{i}"), v, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn json_paths(value: &serde_json::Value) -> Vec<(String, String)> {
    let mut out = Vec::new();
    flatten_json("", value, &mut out);
    out
}

fn name_field(value: &serde_json::Value) -> Option<&str> {
    value
        .get("tool_name")
        .or_else(|| value.get("name"))
        .and_then(|v| v.as_str())
}

impl IntegrityCheck {
    pub fn passes(&self, original: &str, mutated: &str) -> bool {
        match self {
            IntegrityCheck::KeywordsRetained { min_fraction } => {
                let original_words = content_words(original);
                if original_words.is_empty() {
                    return true;
                }
                let mutated_words = content_words(mutated);
                let retained = original_words.intersection(&mutated_words).count();
                retained as f64 / original_words.len() as f64 >= *min_fraction
            }
            IntegrityCheck::ConstraintAdded => {
                if original == mutated {
                    return false;
                }
                let parsed_original = serde_json::from_str::<serde_json::Value>(original);
                let parsed_mutated = serde_json::from_str::<serde_json::Value>(mutated);
                if let (Ok(orig), Ok(new)) = (parsed_original, parsed_mutated) {
                    if orig.is_object() && new.is_object() {
                        let before: BTreeSet<_> = json_paths(&orig).into_iter().collect();
                        return json_paths(&new).into_iter().any(|p| !before.contains(&p));
                    }
                }
                let before = content_words(original);
                content_words(mutated).iter().any(|w| !before.contains(w))
            }
            IntegrityCheck::TermsVagued => {
                if mutated.trim().is_empty() || original == mutated {
                    return false;
                }
                let after = content_words(mutated);
                content_words(original).iter().any(|w| !after.contains(w))
            }
            IntegrityCheck::SchemaParseable => serde_json::from_str::<serde_json::Value>(mutated)
                .map(|v| v.is_object())
                .unwrap_or(false),
            IntegrityCheck::NameChanged => {
                let orig = serde_json::from_str::<serde_json::Value>(original);
                let new = serde_json::from_str::<serde_json::Value>(mutated);
                match (orig, new) {
                    (Ok(orig), Ok(new)) => match (name_field(&orig), name_field(&new)) {
                        (Some(a), Some(b)) => !b.is_empty() && a != b,
                        _ => false,
                    },
                    _ => false,
                }
            }
        }
    }
}

/// Check a mutation against a rule list. Returns the ids of failed rules;
/// empty means pass. Deterministic.
pub fn check_integrity(original: &str, mutated: &str, rules: &[IntegrityRule]) -> Vec<String> {
    rules
        .iter()
        .filter(|rule| !rule.check.passes(original, mutated))
        .map(|rule| rule.id.clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputContract {
    Plain,
    StructuredObject,
}

/// Directive and acceptance rules for one semantic fault type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultTemplate {
    pub fault_type: FaultType,
    pub instruction_text: String,
    pub output_contract: OutputContract,
    pub integrity_rules: Vec<IntegrityRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateCatalog {
    pub catalog_version: u32,
    pub templates: Vec<FaultTemplate>,
}

const BUILTIN_TEMPLATES: &str = include_str!("catalogs/templates.json");

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("unreadable catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed catalog: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid catalog: {0}")]
    Invalid(String),
}

impl TemplateCatalog {
    /// The catalog shipped with the toolkit: one template per semantic
    /// fault type.
    pub fn builtin() -> TemplateCatalog {
        let catalog: TemplateCatalog =
            serde_json::from_str(BUILTIN_TEMPLATES).expect("builtin template catalog parses");
        catalog.validate().expect("builtin template catalog valid");
        catalog
    }

    pub fn from_path(path: &Path) -> Result<TemplateCatalog, CatalogError> {
        let raw = std::fs::read_to_string(path)?;
        let catalog: TemplateCatalog = serde_json::from_str(&raw)?;
        catalog.validate()?;
        Ok(catalog)
    }

    fn validate(&self) -> Result<(), CatalogError> {
        let semantic: Vec<FaultType> = FaultType::CATALOG
            .into_iter()
            .filter(|ft| ft.is_semantic())
            .collect();
        for ft in &semantic {
            let count = self.templates.iter().filter(|t| t.fault_type == *ft).count();
            if count != 1 {
                return Err(CatalogError::Invalid(format!(
                    "expected exactly one template for {}, found {count}",
                    ft.name()
                )));
            }
        }
        for template in &self.templates {
            if !template.fault_type.is_semantic() {
                return Err(CatalogError::Invalid(format!(
                    "{} is not a semantic fault and takes no template",
                    template.fault_type.name()
                )));
            }
            if template.integrity_rules.is_empty() {
                return Err(CatalogError::Invalid(format!(
                    "template for {} has no integrity rules",
                    template.fault_type.name()
                )));
            }
        }
        Ok(())
    }

    pub fn template(&self, fault_type: FaultType) -> Option<&FaultTemplate> {
        self.templates.iter().find(|t| t.fault_type == fault_type)
    }
}

/// Chat message in the wire subset spoken to injector endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// One injector call. The model identifier is supplied by the endpoint
/// implementation; the digest that keys fixture lookups covers only the
/// messages and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectorRequest {
    pub messages: Vec<ChatMessage>,
    pub seed: u64,
}

impl InjectorRequest {
    pub fn new(instruction: &str, original: &str, seed: u64) -> Self {
        InjectorRequest {
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: instruction.to_string(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: original.to_string(),
                },
            ],
            seed,
        }
    }

    /// Hex sha256 over the canonical serialization of (messages, seed).
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EndpointError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("endpoint returned status {0}: {1}")]
    Status(u16, String),
    #[error("no fixture for request digest {0}")]
    UnknownDigest(String),
}

/// A secondary model endpoint performing semantic mutations (also reused as
/// the judge endpoint by the annotator).
pub trait InjectorEndpoint: Send + Sync {
    fn complete(&self, request: &InjectorRequest) -> Result<String, EndpointError>;
    /// Recorded in reports so experiments state which injector produced
    /// their mutations.
    fn identity(&self) -> String;
}

#[derive(Debug, thiserror::Error)]
pub enum InjectorError {
    #[error("injector unavailable after {attempts} attempts: {last_error}")]
    InjectorUnavailable { attempts: u32, last_error: String },
    #[error("integrity check failed after {attempts} attempts; failed rules: {failed_rules:?}")]
    IntegrityCheckFailed {
        attempts: u32,
        failed_rules: Vec<String>,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// Trace coordinates for a delegation.
pub struct DelegationContext<'a> {
    pub task_id: &'a str,
    pub spec_id: &'a str,
    pub point: Option<InterceptionPoint>,
    pub sink: &'a mut dyn EventSink,
}

impl<'a> DelegationContext<'a> {
    fn log_attempt(
        &mut self,
        attempt: u32,
        outcome: &str,
        failed_rules: &[String],
    ) -> Result<(), TraceError> {
        let mut event =
            TraceEvent::injection_attempt(self.sink.next_seq(), self.task_id, self.spec_id, attempt)
                .with_detail("outcome", serde_json::Value::String(outcome.to_string()));
        event.point = self.point;
        if !failed_rules.is_empty() {
            event = event.with_detail(
                "failed_rules",
                serde_json::Value::Array(
                    failed_rules
                        .iter()
                        .map(|r| serde_json::Value::String(r.clone()))
                        .collect(),
                ),
            );
        }
        self.sink.append(event)
    }
}

/// Delegate a mutation to the endpoint, enforcing the template's integrity
/// rules with up to `max_retries` re-executions. The returned text always
/// passes the rules. Attempt `i` carries seed `seed + i` so endpoints (and
/// fixtures) can distinguish retries.
pub fn delegate(
    original: &str,
    template: &FaultTemplate,
    endpoint: &dyn InjectorEndpoint,
    max_retries: u32,
    seed: u64,
    ctx: &mut DelegationContext,
) -> Result<String, InjectorError> {
    let mut last_transport = None;
    let mut last_failed_rules = Vec::new();
    let attempts = max_retries + 1;
    for attempt in 0..attempts {
        let request = InjectorRequest::new(
            &template.instruction_text,
            original,
            seed.wrapping_add(attempt as u64),
        );
        match endpoint.complete(&request) {
            Err(err) => {
                ctx.log_attempt(attempt, "transport_error", &[])?;
                last_transport = Some(err.to_string());
            }
            Ok(mutated) => {
                let failed = check_integrity(original, &mutated, &template.integrity_rules);
                if failed.is_empty() {
                    ctx.log_attempt(attempt, "pass", &[])?;
                    return Ok(mutated);
                }
                ctx.log_attempt(attempt, "integrity_failed", &failed)?;
                last_failed_rules = failed;
            }
        }
    }
    if let Some(last_error) = last_transport {
        if last_failed_rules.is_empty() {
            return Err(InjectorError::InjectorUnavailable {
                attempts,
                last_error,
            });
        }
    }
    Err(InjectorError::IntegrityCheckFailed {
        attempts,
        failed_rules: last_failed_rules,
    })
}

// ---------------------------------------------------------------------------
// Endpoint implementations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureFile {
    pub schema_version: u32,
    pub entries: Vec<FixtureEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub digest: String,
    pub response: String,
}

/// Serves canned responses keyed by request digest. Identical requests get
/// identical bytes.
pub struct FixtureEndpoint {
    entries: std::collections::BTreeMap<String, String>,
    identity: String,
}

impl FixtureEndpoint {
    pub fn from_file(file: FixtureFile, identity: &str) -> Self {
        FixtureEndpoint {
            entries: file
                .entries
                .into_iter()
                .map(|e| (e.digest, e.response))
                .collect(),
            identity: identity.to_string(),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, CatalogError> {
        let raw = std::fs::read_to_string(path)?;
        let file: FixtureFile = serde_json::from_str(&raw)?;
        Ok(Self::from_file(file, &format!("fixture:{}", path.display())))
    }

    /// Convenience for tests: key a canned response to a specific request.
    pub fn with_response(mut self, request: &InjectorRequest, response: &str) -> Self {
        self.entries.insert(request.digest(), response.to_string());
        self
    }

    pub fn empty(identity: &str) -> Self {
        FixtureEndpoint {
            entries: std::collections::BTreeMap::new(),
            identity: identity.to_string(),
        }
    }
}

impl InjectorEndpoint for FixtureEndpoint {
    fn complete(&self, request: &InjectorRequest) -> Result<String, EndpointError> {
        let digest = request.digest();
        self.entries
            .get(&digest)
            .cloned()
            .ok_or(EndpointError::UnknownDigest(digest))
    }

    fn identity(&self) -> String {
        self.identity.clone()
    }
}

/// One scripted response step for `SequenceEndpoint`.
#[derive(Debug, Clone)]
pub enum SequenceStep {
    Text(String),
    TransportError,
}

/// Replies with a scripted sequence of responses regardless of request
/// content; the last step repeats once the script is exhausted. Used to
/// exercise the retry loop with adversarial outputs.
pub struct SequenceEndpoint {
    steps: Vec<SequenceStep>,
    cursor: Mutex<usize>,
}

impl SequenceEndpoint {
    pub fn new(steps: Vec<SequenceStep>) -> Self {
        assert!(!steps.is_empty(), "sequence endpoint needs at least one step");
        SequenceEndpoint {
            steps,
            cursor: Mutex::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        *self.cursor.lock().unwrap()
    }
}

impl InjectorEndpoint for SequenceEndpoint {
    fn complete(&self, _request: &InjectorRequest) -> Result<String, EndpointError> {
        let mut cursor = self.cursor.lock().unwrap();
        let idx = (*cursor).min(self.steps.len() - 1);
        *cursor += 1;
        match &self.steps[idx] {
            SequenceStep::Text(text) => Ok(text.clone()),
            SequenceStep::TransportError => {
                Err(EndpointError::Transport("scripted failure".into()))
            }
        }
    }

    fn identity(&self) -> String {
        "sequence-mock".into()
    }
}

/// Lowercase first letter, strip a trailing period.
fn first_clause(text: &str) -> String {
    let sentence = text
        .split_terminator(['.', '!', '?'])
        .next()
        .unwrap_or(text)
        .trim();
    let mut chars = sentence.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// Offline fallback for instruction logic conflicts: append a constraint
/// demanding the opposite of the first imperative clause.
pub fn deterministic_conflict(text: &str) -> String {
    let clause = first_clause(text);
    if clause.is_empty() {
        format!("{text} and also ensure the opposite: do not proceed")
    } else {
        format!("{text} and also ensure the opposite: do not {clause}")
    }
}

fn longest_content_word(text: &str) -> Option<String> {
    let mut best: Option<&str> = None;
    for token in text.split_whitespace() {
        let trimmed = token.trim_matches(|c: char| !c.is_alphanumeric());
        if trimmed.is_empty() || is_stopword(&trimmed.to_lowercase()) {
            continue;
        }
        if best.map_or(true, |b| trimmed.len() > b.len()) {
            best = Some(trimmed);
        }
    }
    best.map(str::to_string)
}

fn replace_word(text: &str, word: &str, replacement: &str) -> String {
    text.split_whitespace()
        .map(|token| {
            let trimmed = token.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed == word {
                token.replacen(trimmed, replacement, 1)
            } else {
                token.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Offline fallback for instruction ambiguity: the longest concrete term is
/// replaced by a vague one.
pub fn deterministic_ambiguity(text: &str) -> String {
    match longest_content_word(text) {
        Some(word) => replace_word(text, &word, "appropriately"),
        None => format!("{text} as appropriate"),
    }
}

/// Fully offline injector endpoint: applies a deterministic rule-satisfying
/// transform per semantic fault type. The fault type is inferred from the
/// directive carried in the request's system message, so the endpoint stays
/// compatible with the wire shape real injectors see.
pub struct DeterministicInjector {
    catalog: TemplateCatalog,
}

impl Default for DeterministicInjector {
    fn default() -> Self {
        Self::new()
    }
}

impl DeterministicInjector {
    pub fn new() -> Self {
        DeterministicInjector {
            catalog: TemplateCatalog::builtin(),
        }
    }

    fn fault_for(&self, request: &InjectorRequest) -> Option<FaultType> {
        let instruction = request
            .messages
            .iter()
            .find(|m| m.role == "system")
            .map(|m| m.content.as_str())?;
        self.catalog
            .templates
            .iter()
            .find(|t| t.instruction_text == instruction)
            .map(|t| t.fault_type)
    }

    fn mutate(&self, fault: FaultType, original: &str, seed: u64) -> String {
        match fault {
            FaultType::InexecutablePlan => format!(
                "{original}\nThen invoke the tool `phantom_helper_{}` before the first step completes.",
                seed % 97
            ),
            FaultType::CriticalInfoLoss => match longest_content_word(original) {
                Some(word) => replace_word(original, &word, "").split_whitespace().collect::<Vec<_>>().join(" "),
                None => "details omitted".to_string(),
            },
            FaultType::Hallucination => {
                let definite = original
                    .split_whitespace()
                    .map(|w| {
                        let lower = w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
                        if matches!(lower.as_str(), "likely" | "probably" | "perhaps" | "might" | "may") {
                            "certainly".to_string()
                        } else {
                            w.to_string()
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" ");
                format!("{definite} This holds without further verification.")
            }
            FaultType::ToolSelectionError => {
                match serde_json::from_str::<serde_json::Value>(original) {
                    Ok(mut value) => {
                        let key = if value.get("tool_name").is_some() {
                            "tool_name"
                        } else {
                            "name"
                        };
                        if let Some(name) = value.get(key).and_then(|v| v.as_str()) {
                            let swapped = format!("{name}_alt");
                            value[key] = serde_json::Value::String(swapped);
                        }
                        value.to_string()
                    }
                    Err(_) => original.to_string(),
                }
            }
            FaultType::ParameterFillingError => {
                match serde_json::from_str::<serde_json::Value>(original) {
                    Ok(mut value) => {
                        let args = if value.get("arguments").map_or(false, |a| a.is_object()) {
                            value.get_mut("arguments").unwrap()
                        } else {
                            &mut value
                        };
                        perturb_first_argument(args);
                        args_to_root(value)
                    }
                    Err(_) => original.to_string(),
                }
            }
            FaultType::InstructionLogicConflict => deterministic_conflict(original),
            FaultType::InstructionAmbiguity => deterministic_ambiguity(original),
            _ => original.to_string(),
        }
    }
}

fn args_to_root(value: serde_json::Value) -> String {
    value.to_string()
}

/// Alter the first (sorted-key) argument to a plausible wrong value of the
/// same type.
fn perturb_first_argument(args: &mut serde_json::Value) {
    let Some(map) = args.as_object_mut() else {
        return;
    };
    let mut keys: Vec<String> = map.keys().cloned().collect();
    keys.sort();
    for key in keys {
        let replacement = match &map[&key] {
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(|x| serde_json::json!(x + 1.0))
                .or_else(|| n.as_i64().map(|x| serde_json::json!(x + 1))),
            serde_json::Value::String(s) => Some(serde_json::json!(format!("{s}x"))),
            serde_json::Value::Bool(b) => Some(serde_json::json!(!b)),
            _ => None,
        };
        if let Some(new_value) = replacement {
            map.insert(key, new_value);
            return;
        }
    }
}

impl InjectorEndpoint for DeterministicInjector {
    fn complete(&self, request: &InjectorRequest) -> Result<String, EndpointError> {
        let fault = self.fault_for(request).ok_or_else(|| {
            EndpointError::Transport("request does not match any known template".into())
        })?;
        let original = request
            .messages
            .iter()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        Ok(self.mutate(fault, original, request.seed))
    }

    fn identity(&self) -> String {
        "deterministic".into()
    }
}

/// HTTP client for any chat-completions-compatible injector service.
pub struct HttpEndpoint {
    base_url: String,
    model: String,
    client: reqwest::blocking::Client,
}

impl HttpEndpoint {
    pub fn new(base_url: &str, model: &str) -> Self {
        HttpEndpoint {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            client: reqwest::blocking::Client::new(),
        }
    }
}

#[derive(Serialize)]
struct WireChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    seed: u64,
}

#[derive(Deserialize)]
struct WireChatResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

impl InjectorEndpoint for HttpEndpoint {
    fn complete(&self, request: &InjectorRequest) -> Result<String, EndpointError> {
        let url = format!("{}/v1/chat/completions", self.base_url);
        let body = WireChatRequest {
            model: &self.model,
            messages: &request.messages,
            seed: request.seed,
        };
        let response = self
            .client
            .post(&url)
            .json(&body)
            .send()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(EndpointError::Status(status.as_u16(), text));
        }
        let parsed: WireChatResponse = response
            .json()
            .map_err(|e| EndpointError::Transport(format!("unparseable response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| EndpointError::Transport("response has no choices".into()))
    }

    fn identity(&self) -> String {
        format!("{}@{}", self.model, self.base_url)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::MemorySink;

    fn rule(id: &str, check: IntegrityCheck) -> IntegrityRule {
        IntegrityRule {
            id: id.into(),
            check,
        }
    }

    #[test]
    fn identity_adds_nothing() {
        let rules = [rule("added", IntegrityCheck::ConstraintAdded)];
        let failed = check_integrity("x", "x", &rules);
        assert_eq!(failed, vec!["added".to_string()]);
    }

    #[test]
    fn sanctioned_vague_rewrite_passes_terms_vagued() {
        let rules = [rule("vague", IntegrityCheck::TermsVagued)];
        assert!(check_integrity("sort by revenue", "organize the data appropriately", &rules)
            .is_empty());
    }

    #[test]
    fn keyword_retention_hand_count() {
        // "a b c d" -> "a b" retains 2 of 4 content words = 0.5 < 0.75.
        let rules = [rule(
            "kw",
            IntegrityCheck::KeywordsRetained { min_fraction: 0.75 },
        )];
        assert_eq!(check_integrity("a b c d", "a b", &rules), vec!["kw".to_string()]);
        let rules_half = [rule(
            "kw",
            IntegrityCheck::KeywordsRetained { min_fraction: 0.5 },
        )];
        assert!(check_integrity("a b c d", "a b", &rules_half).is_empty());
    }

    #[test]
    fn name_changed_detects_tool_swap() {
        let rules = [rule("name", IntegrityCheck::NameChanged)];
        let original = r#"{"tool_name":"calculator","arguments":{"expr":"2+2"}}"#;
        let swapped = r#"{"tool_name":"web_search","arguments":{"expr":"2+2"}}"#;
        assert!(check_integrity(original, swapped, &rules).is_empty());
        assert_eq!(check_integrity(original, original, &rules).len(), 1);
    }

    #[test]
    fn constraint_added_sees_value_swap_in_json() {
        let rules = [rule("added", IntegrityCheck::ConstraintAdded)];
        let original = r#"{"lat":1,"lon":2}"#;
        let swapped = r#"{"lat":2,"lon":1}"#;
        assert!(check_integrity(original, swapped, &rules).is_empty());
    }

    #[test]
    fn builtin_catalog_covers_every_semantic_fault() {
        let catalog = TemplateCatalog::builtin();
        for ft in FaultType::CATALOG {
            assert_eq!(catalog.template(ft).is_some(), ft.is_semantic(), "{}", ft.name());
        }
    }

    #[test]
    fn fixture_passthrough_on_first_attempt() {
        let catalog = TemplateCatalog::builtin();
        let template = catalog.template(FaultType::InstructionAmbiguity).unwrap();
        let original = "Sort by revenue descending";
        let canned = "Organize the data appropriately";
        let request = InjectorRequest::new(&template.instruction_text, original, 7);
        let endpoint = FixtureEndpoint::empty("fixture").with_response(&request, canned);

        let mut sink = MemorySink::new();
        let mut ctx = DelegationContext {
            task_id: "t1",
            spec_id: "f1",
            point: None,
            sink: &mut sink,
        };
        let mutated = delegate(original, template, &endpoint, 2, 7, &mut ctx).unwrap();
        assert_eq!(mutated, canned);
        assert_eq!(sink.events().len(), 1);
        assert_eq!(sink.events()[0].attempt, Some(0));
    }

    #[test]
    fn adversarial_mock_exhausts_retries_with_logged_attempts() {
        let catalog = TemplateCatalog::builtin();
        let template = catalog.template(FaultType::InstructionAmbiguity).unwrap();
        let original = "Sort by revenue descending";
        // Identity output vagues nothing, so every attempt fails.
        let endpoint = SequenceEndpoint::new(vec![SequenceStep::Text(original.to_string())]);

        let mut sink = MemorySink::new();
        let mut ctx = DelegationContext {
            task_id: "t1",
            spec_id: "f1",
            point: None,
            sink: &mut sink,
        };
        let err = delegate(original, template, &endpoint, 2, 7, &mut ctx).unwrap_err();
        match err {
            InjectorError::IntegrityCheckFailed { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("expected integrity failure, got {other}"),
        }
        assert_eq!(sink.events().len(), 3);
        assert_eq!(endpoint.calls(), 3);
    }

    #[test]
    fn unreachable_endpoint_reports_unavailable() {
        let catalog = TemplateCatalog::builtin();
        let template = catalog.template(FaultType::Hallucination).unwrap();
        let endpoint = SequenceEndpoint::new(vec![SequenceStep::TransportError]);
        let mut sink = MemorySink::new();
        let mut ctx = DelegationContext {
            task_id: "t1",
            spec_id: "f1",
            point: None,
            sink: &mut sink,
        };
        let err = delegate("the answer is likely 42", template, &endpoint, 1, 0, &mut ctx)
            .unwrap_err();
        assert!(matches!(err, InjectorError::InjectorUnavailable { attempts: 2, .. }));
    }

    #[test]
    fn deterministic_injector_passes_its_own_templates() {
        let catalog = TemplateCatalog::builtin();
        let injector = DeterministicInjector::new();
        let samples = [
            (FaultType::InexecutablePlan, "Step 1: parse the table. Step 2: sum the revenue column."),
            (FaultType::CriticalInfoLoss, "Filter rows where country equals France before summing."),
            (FaultType::Hallucination, "the answer is likely 42"),
            (FaultType::ToolSelectionError, r#"{"tool_name":"calculator","arguments":{"expr":"2+2"}}"#),
            (FaultType::ParameterFillingError, r#"{"tool_name":"geocode","arguments":{"lat":1.5,"lon":2.5}}"#),
            (FaultType::InstructionLogicConflict, "Implement a discount of 10% for orders over $100."),
            (FaultType::InstructionAmbiguity, "Sort by revenue descending"),
        ];
        for (fault, original) in samples {
            let template = catalog.template(fault).unwrap();
            let request = InjectorRequest::new(&template.instruction_text, original, 3);
            let mutated = injector.complete(&request).unwrap();
            let failed = check_integrity(original, &mutated, &template.integrity_rules);
            assert!(failed.is_empty(), "{}: failed {:?} for {:?}", fault.name(), failed, mutated);
        }
    }

    #[test]
    fn fixture_digest_is_stable_per_input_and_seed() {
        let a = InjectorRequest::new("inst", "orig", 1);
        let b = InjectorRequest::new("inst", "orig", 1);
        let c = InjectorRequest::new("inst", "orig", 2);
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn deterministic_conflict_keeps_original_and_negates() {
        let out = deterministic_conflict("Sort by revenue descending.");
        assert!(out.starts_with("Sort by revenue descending."));
        assert!(out.contains("do not sort by revenue descending"));
    }
}
