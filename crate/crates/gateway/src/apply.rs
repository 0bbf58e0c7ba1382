//! Application of plan mutations to wire bodies. Ingress mutations touch
//! the request's messages; egress mutations touch the response's first
//! choice. Every applied mutation buffers exactly one fault_injected event
//! (plus any injection_attempt events from delegation) into the caller's
//! sink; the caller flushes them only after a successful upstream round
//! trip.

use faultline_core::injector::{InjectorEndpoint, TemplateCatalog};
use faultline_core::prompt::{
    ambiguate_instruction, ambiguate_instruction_deterministic, conflict_instruction,
    conflict_instruction_deterministic, inject_blind_trust, inject_role_ambiguity,
    InstructionCtx, PromptDoc,
};
use faultline_core::rewrite::{
    corrupt_format, drop_memory, rewrite_semantic, swap_params_deterministic,
    swap_tool_deterministic, violate_context, AgentOutput, DropPolicy, HistoryMessage,
    HistoryWindow, OutputKind, RewriteError, ToolCallData, TRUNCATION_MARKER,
};
use faultline_core::rng::spec_task_seed;
use faultline_core::spec::{FaultMode, FaultSpec};
use faultline_core::taxonomy::{FaultType, InterceptionPoint};
use faultline_core::trace::{payload_digest, EventSink, MemorySink, TraceEvent};

use crate::plan::FaultPlan;

#[derive(Debug, thiserror::Error)]
pub enum ApplyError {
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("injection failed: {0}")]
    Injection(String),
}

pub struct ApplyDeps<'a> {
    pub catalog: &'a TemplateCatalog,
    pub endpoint: &'a dyn InjectorEndpoint,
}

fn effective_seed(plan: &FaultPlan, spec: &FaultSpec, task: &str) -> u64 {
    spec.seed
        .unwrap_or_else(|| spec_task_seed(plan.campaign_seed, &spec.id, task))
}

fn record_injection(
    sink: &mut MemorySink,
    task: &str,
    spec: &FaultSpec,
    point: InterceptionPoint,
    agent: &str,
    payload: &str,
) {
    let event = TraceEvent::fault_injected(sink.next_seq(), task, &spec.id, point)
        .with_agent(agent)
        .with_digest(payload_digest(payload.as_bytes()));
    sink.append(event).expect("buffered events are sequential");
}

fn messages_mut(body: &mut serde_json::Value) -> Result<&mut Vec<serde_json::Value>, ApplyError> {
    body.get_mut("messages")
        .and_then(|m| m.as_array_mut())
        .ok_or_else(|| ApplyError::Malformed("request has no messages array".into()))
}

fn first_index_with_role(messages: &[serde_json::Value], role: &str) -> Option<usize> {
    messages
        .iter()
        .position(|m| m.get("role").and_then(|r| r.as_str()) == Some(role))
}

fn content_str(message: &serde_json::Value) -> Option<&str> {
    message.get("content").and_then(|c| c.as_str())
}

/// Apply ingress mutations in point order: system prompt, user prompt,
/// history window. Returns whether the body changed.
pub fn apply_ingress(
    body: &mut serde_json::Value,
    plan: &FaultPlan,
    agent: &str,
    task: &str,
    deps: &ApplyDeps,
    sink: &mut MemorySink,
) -> Result<bool, ApplyError> {
    let mut mutated = false;

    // Configuration faults: corrupt the system prompt at initialization.
    for spec in plan.matching(InterceptionPoint::SystemPromptInit, agent) {
        let messages = messages_mut(body)?;
        let Some(idx) = first_index_with_role(messages, "system") else {
            continue;
        };
        let Some(text) = content_str(&messages[idx]).map(str::to_string) else {
            continue;
        };
        let doc = PromptDoc::system(&text);
        let result = match spec.fault_type {
            FaultType::RoleAmbiguity => inject_role_ambiguity(
                &doc,
                spec.params.secondary_role.as_deref().unwrap_or_default(),
                &spec.id,
            ),
            FaultType::BlindTrust => inject_blind_trust(
                &doc,
                spec.params.trusted_agent.as_deref().unwrap_or_default(),
                &spec.id,
            ),
            _ => continue,
        };
        let Ok(injected) = result else {
            // An uninjectable prompt (e.g. empty) leaves the request alone.
            continue;
        };
        messages[idx]["content"] = serde_json::Value::String(injected.text.clone());
        record_injection(
            sink,
            task,
            spec,
            InterceptionPoint::SystemPromptInit,
            agent,
            &injected.text,
        );
        mutated = true;
    }

    // Instruction faults: corrupt the task instruction (the first user
    // message, the entry point of the conversation).
    for spec in plan.matching(InterceptionPoint::UserPromptIngress, agent) {
        let seed = effective_seed(plan, spec, task);
        let messages = messages_mut(body)?;
        let Some(idx) = first_index_with_role(messages, "user") else {
            continue;
        };
        let Some(text) = content_str(&messages[idx]).map(str::to_string) else {
            continue;
        };
        let doc = PromptDoc::user(&text);
        let injected = match spec.effective_mode() {
            FaultMode::Delegated => {
                let mut ctx = InstructionCtx {
                    catalog: deps.catalog,
                    endpoint: deps.endpoint,
                    max_retries: plan.max_retries,
                    seed,
                    task_id: task,
                    spec_id: &spec.id,
                    sink,
                };
                match spec.fault_type {
                    FaultType::InstructionLogicConflict => conflict_instruction(&doc, &mut ctx),
                    FaultType::InstructionAmbiguity => ambiguate_instruction(&doc, &mut ctx),
                    _ => continue,
                }
                .map_err(|e| ApplyError::Injection(e.to_string()))?
            }
            FaultMode::Deterministic => match spec.fault_type {
                FaultType::InstructionLogicConflict => {
                    conflict_instruction_deterministic(&doc, &spec.id)
                        .map_err(|e| ApplyError::Injection(e.to_string()))?
                }
                FaultType::InstructionAmbiguity => {
                    ambiguate_instruction_deterministic(&doc, &spec.id)
                        .map_err(|e| ApplyError::Injection(e.to_string()))?
                }
                _ => continue,
            },
        };
        let messages = messages_mut(body)?;
        messages[idx]["content"] = serde_json::Value::String(injected.text.clone());
        record_injection(
            sink,
            task,
            spec,
            InterceptionPoint::UserPromptIngress,
            agent,
            &injected.text,
        );
        mutated = true;
    }

    // Memory faults: mutate the conversation history. At this layer the
    // message role stands in for the sender, so a drop_agent selector
    // matches a wire role.
    for spec in plan.matching(InterceptionPoint::HistoryWindowIngress, agent) {
        let messages = messages_mut(body)?;
        let window = HistoryWindow {
            messages: messages
                .iter()
                .map(|m| {
                    let role = m.get("role").and_then(|r| r.as_str()).unwrap_or("");
                    HistoryMessage {
                        sender: role.to_string(),
                        role: role.to_string(),
                        text: content_str(m).unwrap_or("").to_string(),
                        system: role == "system",
                    }
                })
                .collect(),
        };
        let result = match spec.fault_type {
            FaultType::MemoryLoss => {
                let policy = if let Some(n) = spec.params.drop_first_n {
                    DropPolicy::DropFirstN { n }
                } else {
                    DropPolicy::DropAgent {
                        agent: spec.params.drop_agent.clone().unwrap_or_default(),
                    }
                };
                drop_memory(&window, &policy)
            }
            FaultType::ContextLengthViolation => {
                violate_context(&window, spec.params.char_budget.unwrap_or(1))
            }
            _ => continue,
        };
        let survivors = match result {
            Ok(window) => window,
            // A fault that does not bind this history shape is skipped.
            Err(
                RewriteError::WouldEmptyHistory
                | RewriteError::BudgetNotBinding { .. }
                | RewriteError::UnknownAgent(_),
            ) => continue,
            Err(other) => return Err(ApplyError::Injection(other.to_string())),
        };

        let originals = std::mem::take(messages);
        let mut rebuilt = Vec::with_capacity(survivors.messages.len());
        let mut cursor = 0usize;
        for survivor in &survivors.messages {
            if survivor.sender == "context" && survivor.text == TRUNCATION_MARKER {
                rebuilt.push(serde_json::json!({
                    "role": "user",
                    "content": TRUNCATION_MARKER,
                }));
                continue;
            }
            // Keep the original message object (with any unrecognized
            // fields) for every survivor. Duplicate-content messages are
            // matched greedily from the front.
            while cursor < originals.len() {
                let candidate = &originals[cursor];
                let role = candidate.get("role").and_then(|r| r.as_str()).unwrap_or("");
                let text = content_str(candidate).unwrap_or("");
                if role == survivor.role && text == survivor.text {
                    break;
                }
                cursor += 1;
            }
            if cursor < originals.len() {
                rebuilt.push(originals[cursor].clone());
                cursor += 1;
            } else {
                rebuilt.push(serde_json::json!({
                    "role": survivor.role,
                    "content": survivor.text,
                }));
            }
        }
        *messages = rebuilt;
        let digest_src = serde_json::to_string(&messages).unwrap_or_default();
        record_injection(
            sink,
            task,
            spec,
            InterceptionPoint::HistoryWindowIngress,
            agent,
            &digest_src,
        );
        mutated = true;
    }

    Ok(mutated)
}

fn response_message_mut(body: &mut serde_json::Value) -> Option<&mut serde_json::Value> {
    body.get_mut("choices")?
        .as_array_mut()?
        .first_mut()?
        .get_mut("message")
}

/// Apply egress mutations to the upstream response: agent-output faults on
/// the message content, action faults on the first tool call. Returns
/// whether the body changed.
pub fn apply_egress(
    body: &mut serde_json::Value,
    plan: &FaultPlan,
    agent: &str,
    task: &str,
    deps: &ApplyDeps,
    sink: &mut MemorySink,
) -> Result<bool, ApplyError> {
    let mut mutated = false;

    for spec in plan.matching(InterceptionPoint::AgentOutputEgress, agent) {
        let seed = effective_seed(plan, spec, task);
        let Some(message) = response_message_mut(body) else {
            continue;
        };
        let Some(content) = content_str(message).map(str::to_string) else {
            continue;
        };
        if content.is_empty() {
            continue;
        }
        let kind = match spec.fault_type {
            FaultType::InexecutablePlan | FaultType::CriticalInfoLoss => OutputKind::Plan,
            FaultType::Hallucination => OutputKind::Reasoning,
            _ => continue,
        };
        let output = AgentOutput::text(agent, kind, &content);
        let rewritten = rewrite_semantic(
            &output,
            spec.fault_type,
            deps.catalog,
            deps.endpoint,
            plan.max_retries,
            seed,
            task,
            &spec.id,
            sink,
        )
        .map_err(|e| ApplyError::Injection(e.to_string()))?;
        message["content"] = serde_json::Value::String(rewritten.content.clone());
        record_injection(
            sink,
            task,
            spec,
            InterceptionPoint::AgentOutputEgress,
            agent,
            &rewritten.content,
        );
        mutated = true;
    }

    for spec in plan.matching(InterceptionPoint::ToolCallEgress, agent) {
        let seed = effective_seed(plan, spec, task);
        let Some(message) = response_message_mut(body) else {
            continue;
        };
        let Some(function) = message
            .get_mut("tool_calls")
            .and_then(|t| t.as_array_mut())
            .and_then(|calls| calls.first_mut())
            .and_then(|call| call.get_mut("function"))
        else {
            continue;
        };
        let Some(name) = function.get("name").and_then(|n| n.as_str()).map(str::to_string)
        else {
            continue;
        };
        let Some(args_str) = function
            .get("arguments")
            .and_then(|a| a.as_str())
            .map(str::to_string)
        else {
            continue;
        };
        let Ok(arguments) = serde_json::from_str::<serde_json::Value>(&args_str) else {
            continue;
        };
        let call = ToolCallData {
            tool_name: name,
            arguments,
        };

        enum Mutation {
            Call(ToolCallData),
            RawArguments(String),
        }
        let applied = match (spec.fault_type, spec.effective_mode()) {
            (FaultType::ToolSelectionError, FaultMode::Deterministic) => {
                let catalog = spec.params.tool_catalog.clone().unwrap_or_default();
                match swap_tool_deterministic(&call, &catalog, seed) {
                    Ok(swapped) => Some(Mutation::Call(swapped)),
                    Err(RewriteError::ToolNotInCatalog(_)) => None,
                    Err(e) => return Err(ApplyError::Injection(e.to_string())),
                }
            }
            (FaultType::ParameterFillingError, FaultMode::Deterministic) => {
                match swap_params_deterministic(&call.arguments) {
                    Ok(arguments) => Some(Mutation::Call(ToolCallData {
                        tool_name: call.tool_name.clone(),
                        arguments,
                    })),
                    Err(RewriteError::NotApplicable(_)) => None,
                    Err(e) => return Err(ApplyError::Injection(e.to_string())),
                }
            }
            (FaultType::ToolSelectionError | FaultType::ParameterFillingError, FaultMode::Delegated) => {
                let output = AgentOutput::tool(agent, call.clone());
                let rewritten = rewrite_semantic(
                    &output,
                    spec.fault_type,
                    deps.catalog,
                    deps.endpoint,
                    plan.max_retries,
                    seed,
                    task,
                    &spec.id,
                    sink,
                )
                .map_err(|e| ApplyError::Injection(e.to_string()))?;
                rewritten.tool_call.map(Mutation::Call)
            }
            (FaultType::ParameterFormatError, _) => {
                let kind = spec
                    .params
                    .corruption_kind
                    .clone()
                    .expect("validated at parse");
                match corrupt_format(args_str.as_bytes(), &kind, seed) {
                    Ok(bytes) => Some(Mutation::RawArguments(
                        String::from_utf8_lossy(&bytes).into_owned(),
                    )),
                    // A corruption that cannot bind these arguments is
                    // skipped rather than failing the request.
                    Err(RewriteError::FieldNotFound(_) | RewriteError::AlreadyInvalid(_)) => None,
                    Err(e) => return Err(ApplyError::Injection(e.to_string())),
                }
            }
            _ => None,
        };

        let Some(mutation) = applied else {
            continue;
        };
        let digest_src;
        match mutation {
            Mutation::Call(new_call) => {
                function["name"] = serde_json::Value::String(new_call.tool_name.clone());
                let args = serde_json::to_string(&new_call.arguments)
                    .expect("arguments serialize");
                function["arguments"] = serde_json::Value::String(args.clone());
                digest_src = format!("{}{}", new_call.tool_name, args);
            }
            Mutation::RawArguments(raw) => {
                function["arguments"] = serde_json::Value::String(raw.clone());
                digest_src = raw;
            }
        }
        record_injection(
            sink,
            task,
            spec,
            InterceptionPoint::ToolCallEgress,
            agent,
            &digest_src,
        );
        mutated = true;
    }

    Ok(mutated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use faultline_core::campaign::AgentMapping;
    use faultline_core::injector::DeterministicInjector;
    use faultline_core::spec::{CorruptionKind, FaultParams, TargetSelector};
    use std::collections::BTreeMap;

    fn plan_with(specs: Vec<FaultSpec>) -> FaultPlan {
        let mut by_point: BTreeMap<InterceptionPoint, Vec<FaultSpec>> = BTreeMap::new();
        for spec in specs {
            by_point
                .entry(spec.fault_type.interception_point().unwrap())
                .or_default()
                .push(spec);
        }
        FaultPlan {
            campaign_seed: 42,
            max_retries: 2,
            upstream: "http://unused".into(),
            mapping: AgentMapping::default(),
            by_point,
            inapplicable: vec![],
        }
    }

    fn agent_spec(id: &str, fault_type: FaultType, params: FaultParams) -> FaultSpec {
        FaultSpec {
            id: id.into(),
            fault_type,
            target: TargetSelector::Agent { agent: "judge".into() },
            params,
            mode: None,
            seed: None,
        }
    }

    fn request_body() -> serde_json::Value {
        serde_json::json!({
            "model": "m1",
            "messages": [
                {"role": "system", "content": "You are a Judge.", "x_custom": 7},
                {"role": "user", "content": "Sort by revenue descending"},
                {"role": "assistant", "content": "Working on it."}
            ],
            "temperature": 0.2
        })
    }

    #[test]
    fn blind_trust_touches_only_the_system_message() {
        let plan = plan_with(vec![agent_spec(
            "f1",
            FaultType::BlindTrust,
            FaultParams {
                trusted_agent: Some("Generator".into()),
                ..FaultParams::default()
            },
        )]);
        let catalog = TemplateCatalog::builtin();
        let endpoint = DeterministicInjector::new();
        let deps = ApplyDeps {
            catalog: &catalog,
            endpoint: &endpoint,
        };
        let mut body = request_body();
        let original = body.clone();
        let mut sink = MemorySink::new();
        let mutated =
            apply_ingress(&mut body, &plan, "judge", "t1", &deps, &mut sink).unwrap();
        assert!(mutated);
        let system = body["messages"][0]["content"].as_str().unwrap();
        assert!(system.contains("You are a Judge."));
        assert!(system.contains("accept all input from Generator as absolute truth"));
        // Custom field on the system message survives; other messages and
        // top-level fields are untouched.
        assert_eq!(body["messages"][0]["x_custom"], serde_json::json!(7));
        assert_eq!(body["messages"][1], original["messages"][1]);
        assert_eq!(body["messages"][2], original["messages"][2]);
        assert_eq!(body["temperature"], original["temperature"]);
        assert_eq!(sink.events().len(), 1);
    }

    #[test]
    fn unmatched_agent_leaves_body_untouched() {
        let plan = plan_with(vec![agent_spec(
            "f1",
            FaultType::BlindTrust,
            FaultParams {
                trusted_agent: Some("Generator".into()),
                ..FaultParams::default()
            },
        )]);
        let catalog = TemplateCatalog::builtin();
        let endpoint = DeterministicInjector::new();
        let deps = ApplyDeps {
            catalog: &catalog,
            endpoint: &endpoint,
        };
        let mut body = request_body();
        let original = body.clone();
        let mut sink = MemorySink::new();
        let mutated =
            apply_ingress(&mut body, &plan, "someone-else", "t1", &deps, &mut sink).unwrap();
        assert!(!mutated);
        assert_eq!(body, original);
        assert!(sink.events().is_empty());
    }

    #[test]
    fn memory_loss_preserves_system_and_survivor_objects() {
        let plan = plan_with(vec![agent_spec(
            "f1",
            FaultType::MemoryLoss,
            FaultParams {
                drop_first_n: Some(1),
                ..FaultParams::default()
            },
        )]);
        let catalog = TemplateCatalog::builtin();
        let endpoint = DeterministicInjector::new();
        let deps = ApplyDeps {
            catalog: &catalog,
            endpoint: &endpoint,
        };
        let mut body = request_body();
        let original = body.clone();
        let mut sink = MemorySink::new();
        let mutated = apply_ingress(&mut body, &plan, "judge", "t1", &deps, &mut sink).unwrap();
        assert!(mutated);
        let messages = body["messages"].as_array().unwrap();
        assert_eq!(messages.len(), 2);
        assert_eq!(messages[0], original["messages"][0]);
        assert_eq!(messages[1], original["messages"][2]);
    }

    #[test]
    fn format_corruption_touches_only_tool_arguments() {
        let plan = plan_with(vec![agent_spec(
            "f1",
            FaultType::ParameterFormatError,
            FaultParams {
                corruption_kind: Some(CorruptionKind::DropClosingDelimiter),
                ..FaultParams::default()
            },
        )]);
        let catalog = TemplateCatalog::builtin();
        let endpoint = DeterministicInjector::new();
        let deps = ApplyDeps {
            catalog: &catalog,
            endpoint: &endpoint,
        };
        let mut body = serde_json::json!({
            "id": "resp-1",
            "choices": [{
                "index": 0,
                "message": {
                    "role": "assistant",
                    "content": "calling a tool",
                    "tool_calls": [{
                        "id": "call-1",
                        "type": "function",
                        "function": {"name": "calculator", "arguments": "{\"expr\":\"2+2\"}"}
                    }]
                }
            }]
        });
        let original = body.clone();
        let mut sink = MemorySink::new();
        let mutated = apply_egress(&mut body, &plan, "judge", "t1", &deps, &mut sink).unwrap();
        assert!(mutated);
        let function = &body["choices"][0]["message"]["tool_calls"][0]["function"];
        assert_eq!(function["name"], original["choices"][0]["message"]["tool_calls"][0]["function"]["name"]);
        let args = function["arguments"].as_str().unwrap();
        assert!(serde_json::from_str::<serde_json::Value>(args).is_err());
        assert_eq!(
            body["choices"][0]["message"]["content"],
            original["choices"][0]["message"]["content"]
        );
        assert_eq!(body["id"], original["id"]);
    }
}
