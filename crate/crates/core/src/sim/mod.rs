//! Deterministic discrete-event simulation of multi-agent topologies with
//! scripted agents: the execution target for routing faults and the source
//! of closed-form oracles for every metric.
//!
//! Scripted semantics, in brief:
//! - An injected fault taints the affected message lineage. Agents that
//!   process a tainted input draw detection (`p_detect`) and repair
//!   (`p_fix`) outcomes from their per-(task, agent) RNG stream and emit
//!   `ft_triggered` / `ft_fixed` events tagged with their tier label.
//! - A blind-trust directive forces the targeted agent's effective
//!   `p_detect` to zero and marks its products erroneous, so upstream
//!   errors propagate uncritically. A role-ambiguity merge likewise
//!   perturbs the agent's own outputs.
//! - With a shared pool, repair after detection is guaranteed and credited
//!   to the mechanism tier.
//! - Rule filters (dedup, subscriptions, loop guards) neutralize routing
//!   anomalies deterministically and are credited to the rule tier; with
//!   filters off, the receiving agent gets one reasoning-tier chance to
//!   handle the anomaly, and an unhandled anomaly taints its next output.
//!
//! Task success: a clean final product always succeeds; a locally repaired
//! one succeeds with `p_succ_given_fix`; an unrepaired one with
//! `p_succ_given_unfixed`.

pub mod bus;
pub mod scenario;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::campaign::{CampaignConfig, CampaignError, ExecutionTarget, TaskDescriptor};
use crate::injector::{InjectorEndpoint, TemplateCatalog};
use crate::prompt::{
    ambiguate_instruction, ambiguate_instruction_deterministic, conflict_instruction,
    conflict_instruction_deterministic, inject_blind_trust, inject_role_ambiguity,
    InstructionCtx, PromptDoc,
};
use crate::rewrite::{
    corrupt_format, drop_memory, rewrite_semantic, swap_params_deterministic,
    swap_tool_deterministic, violate_context, AgentOutput, DropPolicy, OutputKind, RewriteError,
    ToolCallData,
};
use crate::rng::{agent_stream_seed, DetRng};
use crate::spec::{FaultMode, FaultSpec};
use crate::taxonomy::{FaultCategory, FaultType, InterceptionPoint};
use crate::trace::{
    derive_outcome, payload_digest, EventSink, FtTier, MemorySink, TaskOutcome, TraceError,
    TraceEvent, TraceHeader, TraceWriter,
};

use bus::{Anomaly, Bus, SimMessage, Taint};
use scenario::{AgentPolicy, ScenarioConfig, Topology};

/// Upper bound on cyclic self-deliveries when no loop guard is configured.
const HARD_HOP_CAP: u32 = 64;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("scenario/config error: {0}")]
    Config(String),
    #[error(transparent)]
    Campaign(#[from] CampaignError),
    #[error("injection failed: {0}")]
    Injection(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("output directory already holds a manifest: {0} (use --force to overwrite)")]
    OutputExists(PathBuf),
}

/// Shared inputs for one simulated pass.
pub struct SimOptions<'a> {
    pub scenario: &'a ScenarioConfig,
    pub campaign_seed: u64,
    pub catalog: &'a TemplateCatalog,
    pub endpoint: &'a dyn InjectorEndpoint,
    pub max_retries: u32,
}

#[derive(Debug, Clone)]
pub struct TaskRunResult {
    pub events: Vec<TraceEvent>,
    pub outcome: TaskOutcome,
}

struct AgentState {
    policy: AgentPolicy,
    prompt: PromptDoc,
    rng: DetRng,
    /// A configuration fault corrupted this agent's system prompt; its
    /// products are erroneous until resolved.
    perturbed: bool,
    perturbation_resolved: bool,
    /// Blind trust: verification disabled.
    forced_no_detect: bool,
    /// An unhandled routing anomaly will taint this agent's next output.
    disturbed: bool,
    /// One reasoning-tier draw per task for routing anomalies.
    anomaly_drawn: bool,
    memory_fault_applied: bool,
    history: crate::rewrite::HistoryWindow,
    seen_digests: BTreeSet<String>,
}

impl AgentState {
    fn new(id: &str, policy: AgentPolicy, rng: DetRng) -> Self {
        let role = policy
            .role
            .clone()
            .unwrap_or_else(|| capitalize(id));
        AgentState {
            policy,
            prompt: PromptDoc {
                role: crate::prompt::PromptRole::SystemPrompt,
                text: format!("You are the {role}."),
                origin_agent: Some(id.to_string()),
                injected_specs: Vec::new(),
            },
            rng,
            perturbed: false,
            perturbation_resolved: false,
            forced_no_detect: false,
            disturbed: false,
            anomaly_drawn: false,
            memory_fault_applied: false,
            history: crate::rewrite::HistoryWindow::default(),
            seen_digests: BTreeSet::new(),
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

struct Engine<'a> {
    opts: &'a SimOptions<'a>,
    task: &'a TaskDescriptor,
    spec: Option<&'a FaultSpec>,
    seed: u64,
    sink: MemorySink,
    agents: BTreeMap<String, AgentState>,
    order: Vec<String>,
    bus: Bus,
    pool_enabled: bool,
    /// Egress (output/tool-call) injection already performed this task.
    injected: bool,
    fault_applicable: bool,
    /// Injection is skipped entirely (baseline pass or inapplicable fault).
    skip_injection: bool,
    rule_ft_emitted: bool,
}

impl<'a> Engine<'a> {
    fn new(opts: &'a SimOptions<'a>, task: &'a TaskDescriptor, spec: Option<&'a FaultSpec>, seed: u64) -> Self {
        let order = opts.scenario.topology.agent_ids();
        let spec_id = spec.map(|s| s.id.as_str());
        let agents = order
            .iter()
            .map(|id| {
                let rng = DetRng::new(agent_stream_seed(
                    opts.campaign_seed,
                    spec_id,
                    &task.id,
                    id,
                ));
                (id.clone(), AgentState::new(id, opts.scenario.policy(id), rng))
            })
            .collect();
        let inapplicable = spec.map_or(false, |s| {
            s.fault_type.category() == FaultCategory::Action && task.tool_call.is_none()
        });
        Engine {
            opts,
            task,
            spec,
            seed,
            sink: MemorySink::new(),
            agents,
            order,
            bus: Bus::new(),
            pool_enabled: false,
            injected: false,
            fault_applicable: !inapplicable,
            skip_injection: spec.is_none() || inapplicable,
            rule_ft_emitted: false,
        }
    }

    fn spec_id(&self) -> Option<&str> {
        self.spec.map(|s| s.id.as_str())
    }

    fn push(&mut self, mut event: TraceEvent) -> Result<(), SimError> {
        if event.spec_id.is_none() {
            event.spec_id = self.spec_id().map(str::to_string);
        }
        self.sink.append(event)?;
        Ok(())
    }

    fn event_seq(&self) -> u64 {
        self.sink.next_seq()
    }

    // -- fault application ------------------------------------------------

    fn apply_config_faults(&mut self) -> Result<(), SimError> {
        let Some(spec) = self.spec else { return Ok(()) };
        if self.skip_injection || spec.fault_type.category() != FaultCategory::Configuration {
            return Ok(());
        }
        for id in self.order.clone() {
            if !spec.target.matches_agent(&id) {
                continue;
            }
            let agent = self.agents.get_mut(&id).unwrap();
            let mutated = match spec.fault_type {
                FaultType::RoleAmbiguity => inject_role_ambiguity(
                    &agent.prompt,
                    spec.params.secondary_role.as_deref().unwrap_or_default(),
                    &spec.id,
                ),
                FaultType::BlindTrust => inject_blind_trust(
                    &agent.prompt,
                    spec.params.trusted_agent.as_deref().unwrap_or_default(),
                    &spec.id,
                ),
                _ => unreachable!("configuration faults are role ambiguity and blind trust"),
            }
            .map_err(|e| SimError::Injection(e.to_string()))?;
            agent.prompt = mutated;
            agent.perturbed = true;
            if spec.fault_type == FaultType::BlindTrust {
                agent.forced_no_detect = true;
            }
            let digest = payload_digest(agent.prompt.text.as_bytes());
            let event = TraceEvent::fault_injected(
                self.event_seq(),
                &self.task.id,
                &spec.id,
                InterceptionPoint::SystemPromptInit,
            )
            .with_agent(&id)
            .with_digest(digest);
            self.push(event)?;
        }
        Ok(())
    }

    /// Build the initial task input, applying instruction faults at the
    /// entry point.
    fn prepare_task_input(&mut self) -> Result<(String, Option<Taint>), SimError> {
        let Some(spec) = self.spec else {
            return Ok((self.task.input.clone(), None));
        };
        if self.skip_injection || spec.fault_type.category() != FaultCategory::Instruction {
            return Ok((self.task.input.clone(), None));
        }
        let prompt = PromptDoc::user(&self.task.input);
        let mutated = match spec.effective_mode() {
            FaultMode::Delegated => {
                let mut ctx = InstructionCtx {
                    catalog: self.opts.catalog,
                    endpoint: self.opts.endpoint,
                    max_retries: self.opts.max_retries,
                    seed: self.seed,
                    task_id: &self.task.id,
                    spec_id: &spec.id,
                    sink: &mut self.sink,
                };
                let result = match spec.fault_type {
                    FaultType::InstructionLogicConflict => conflict_instruction(&prompt, &mut ctx),
                    FaultType::InstructionAmbiguity => ambiguate_instruction(&prompt, &mut ctx),
                    _ => unreachable!("instruction faults are conflict and ambiguity"),
                };
                result.map_err(|e| SimError::Injection(e.to_string()))?
            }
            FaultMode::Deterministic => match spec.fault_type {
                FaultType::InstructionLogicConflict => {
                    conflict_instruction_deterministic(&prompt, &spec.id)
                        .map_err(|e| SimError::Injection(e.to_string()))?
                }
                FaultType::InstructionAmbiguity => {
                    ambiguate_instruction_deterministic(&prompt, &spec.id)
                        .map_err(|e| SimError::Injection(e.to_string()))?
                }
                _ => unreachable!(),
            },
        };
        let digest = payload_digest(mutated.text.as_bytes());
        let event = TraceEvent::fault_injected(
            self.event_seq(),
            &self.task.id,
            &spec.id,
            InterceptionPoint::UserPromptIngress,
        )
        .with_digest(digest);
        self.push(event)?;
        Ok((mutated.text, Some(Taint::unfixed(&spec.id))))
    }

    // -- bus interaction ---------------------------------------------------

    fn routing_spec(&self) -> Option<&'a FaultSpec> {
        let spec = self.spec?;
        if self.skip_injection || spec.fault_type.category() != FaultCategory::Communication {
            return None;
        }
        Some(spec)
    }

    fn make_msg(&mut self, sender: &str, intended: Vec<String>, payload: String, taint: Option<Taint>) -> SimMessage {
        SimMessage {
            id: self.bus.next_msg_id(),
            sender: sender.to_string(),
            intended,
            payload,
            hop: 0,
            taint,
        }
    }

    fn send(&mut self, msg: &SimMessage) -> Result<(), SimError> {
        let routing = self.routing_spec();
        let planned = self.bus.send(msg, routing, &self.order);
        let recipients: Vec<serde_json::Value> = planned
            .iter()
            .map(|d| serde_json::Value::String(d.recipient.clone()))
            .collect();
        let event = TraceEvent::msg_sent(self.event_seq(), &self.task.id, &msg.sender)
            .with_digest(payload_digest(msg.payload.as_bytes()))
            .with_detail("recipients", serde_json::Value::Array(recipients));
        self.push(event)?;
        if planned.iter().any(|d| d.anomaly.is_some()) && !self.injected {
            self.injected = true;
            let spec = self.spec.expect("routing anomaly requires a spec");
            let event =
                TraceEvent::fault_injected_routing(self.event_seq(), &self.task.id, &spec.id)
                    .with_digest(payload_digest(msg.payload.as_bytes()));
            self.push(event)?;
        }
        Ok(())
    }

    fn detect_draw(&mut self, agent_id: &str) -> bool {
        let agent = self.agents.get_mut(agent_id).unwrap();
        let p = if agent.forced_no_detect {
            0.0
        } else {
            agent.policy.p_detect
        };
        agent.rng.bernoulli(p)
    }

    fn fix_draw(&mut self, agent_id: &str) -> bool {
        let agent = self.agents.get_mut(agent_id).unwrap();
        let p = agent.policy.p_fix;
        agent.rng.bernoulli(p)
    }

    fn emit_rule_ft(&mut self, agent_id: &str) -> Result<(), SimError> {
        if self.rule_ft_emitted {
            return Ok(());
        }
        self.rule_ft_emitted = true;
        let triggered = TraceEvent::ft_triggered(self.event_seq(), &self.task.id, FtTier::Rule)
            .with_agent(agent_id);
        self.push(triggered)?;
        let fixed = TraceEvent::ft_fixed(self.event_seq(), &self.task.id, FtTier::Rule)
            .with_agent(agent_id);
        self.push(fixed)?;
        Ok(())
    }

    /// One reasoning-tier chance per task to handle a routing anomaly the
    /// filters let through.
    fn anomaly_reasoning(&mut self, agent_id: &str) -> Result<(), SimError> {
        if self.agents[agent_id].anomaly_drawn {
            return Ok(());
        }
        self.agents.get_mut(agent_id).unwrap().anomaly_drawn = true;
        let tier = self.agents[agent_id].policy.tier_label;
        if self.detect_draw(agent_id) {
            let event = TraceEvent::ft_triggered(self.event_seq(), &self.task.id, tier)
                .with_agent(agent_id);
            self.push(event)?;
            if self.fix_draw(agent_id) {
                let event = TraceEvent::ft_fixed(self.event_seq(), &self.task.id, tier)
                    .with_agent(agent_id);
                self.push(event)?;
                return Ok(());
            }
        }
        self.agents.get_mut(agent_id).unwrap().disturbed = true;
        Ok(())
    }

    fn handle_cycle_delivery(&mut self, msg: SimMessage, agent_id: &str) -> Result<(), SimError> {
        let guard = self.agents[agent_id].policy.loop_guard_max_hops;
        let (cap, rule_handled) = match guard {
            Some(g) => (g, true),
            None => (HARD_HOP_CAP, false),
        };

        if msg.hop > cap {
            self.bus.mark_dropped();
            let event = TraceEvent::loop_detected(self.event_seq(), &self.task.id, agent_id)
                .with_detail("hop", serde_json::json!(msg.hop));
            self.push(event)?;
            let mut restored = msg.clone();
            restored.hop += 1;
            if rule_handled {
                self.emit_rule_ft(agent_id)?;
            } else {
                restored.taint = Some(Taint::unfixed(
                    self.spec_id().unwrap_or_default(),
                ));
            }
            for recipient in msg.intended.clone() {
                self.bus.enqueue_direct(restored.clone(), &recipient);
            }
            return Ok(());
        }

        // A self-delivery below the cap is processed.
        self.bus.mark_processed();
        let event = TraceEvent::msg_received(self.event_seq(), &self.task.id, agent_id)
            .with_digest(payload_digest(msg.payload.as_bytes()))
            .with_detail("hop", serde_json::json!(msg.hop))
            .with_detail("self_delivery", serde_json::json!(true));
        self.push(event)?;

        if !rule_handled && !self.agents[agent_id].anomaly_drawn {
            self.agents.get_mut(agent_id).unwrap().anomaly_drawn = true;
            let tier = self.agents[agent_id].policy.tier_label;
            if self.detect_draw(agent_id) {
                let event = TraceEvent::ft_triggered(self.event_seq(), &self.task.id, tier)
                    .with_agent(agent_id);
                self.push(event)?;
                let fixed = self.fix_draw(agent_id);
                let mut direct = msg.clone();
                direct.hop += 1;
                if fixed {
                    let event = TraceEvent::ft_fixed(self.event_seq(), &self.task.id, tier)
                        .with_agent(agent_id);
                    self.push(event)?;
                } else {
                    direct.taint = Some(Taint::unfixed(self.spec_id().unwrap_or_default()));
                }
                for recipient in msg.intended.clone() {
                    self.bus.enqueue_direct(direct.clone(), &recipient);
                }
                return Ok(());
            }
        }

        // Loop continues: the re-send is redirected again by the fault.
        let resend = msg.clone();
        self.send(&resend)?;
        Ok(())
    }

    /// Drain the queue, applying filters and anomaly handling; returns the
    /// first clean content delivery addressed to `target`.
    fn pump(&mut self, target: &str) -> Result<Option<SimMessage>, SimError> {
        let mut captured: Option<SimMessage> = None;
        while let Some(delivery) = self.bus.pop() {
            let recipient = delivery.recipient.clone();
            let anomaly = delivery.anomaly;
            let msg = delivery.msg;

            if anomaly == Some(Anomaly::Cyclic) && recipient == msg.sender {
                self.handle_cycle_delivery(msg, &recipient)?;
                continue;
            }

            let dedup_on = self.agents[&recipient].policy.dedup;
            let dedup_key = payload_digest(format!("{}\u{1f}{}", msg.sender, msg.payload).as_bytes());
            if dedup_on && self.agents[&recipient].seen_digests.contains(&dedup_key) {
                self.bus.mark_filtered();
                let event =
                    TraceEvent::msg_filtered(self.event_seq(), &self.task.id, &recipient, "dedup");
                self.push(event)?;
                if anomaly == Some(Anomaly::Duplicate) {
                    self.emit_rule_ft(&recipient)?;
                }
                continue;
            }

            let subscribed = match &self.agents[&recipient].policy.subscriptions {
                None => true,
                Some(subs) => subs.contains(&msg.sender),
            };
            if !subscribed {
                self.bus.mark_filtered();
                let event = TraceEvent::msg_filtered(
                    self.event_seq(),
                    &self.task.id,
                    &recipient,
                    "subscription",
                );
                self.push(event)?;
                if anomaly == Some(Anomaly::Irrelevant) {
                    self.emit_rule_ft(&recipient)?;
                }
                continue;
            }

            self.bus.mark_processed();
            let event = TraceEvent::msg_received(self.event_seq(), &self.task.id, &recipient)
                .with_digest(payload_digest(msg.payload.as_bytes()))
                .with_detail("sender", serde_json::json!(msg.sender))
                .with_detail("hop", serde_json::json!(msg.hop));
            self.push(event)?;

            let agent = self.agents.get_mut(&recipient).unwrap();
            agent.seen_digests.insert(dedup_key);
            agent.history.messages.push(crate::rewrite::HistoryMessage {
                sender: msg.sender.clone(),
                role: "user".into(),
                text: msg.payload.clone(),
                system: false,
            });

            if anomaly.is_some() {
                self.anomaly_reasoning(&recipient)?;
            }

            if recipient == target && anomaly.is_none() && captured.is_none() {
                captured = Some(msg);
            }
        }
        Ok(captured)
    }

    // -- agent production --------------------------------------------------

    /// Apply a pending memory fault to the agent's history window. A
    /// precondition failure means the fault cannot bind this task.
    fn apply_memory_fault(&mut self, agent_id: &str) -> Result<bool, SimError> {
        let Some(spec) = self.spec else { return Ok(false) };
        if self.skip_injection
            || spec.fault_type.category() != FaultCategory::Memory
            || !spec.target.matches_agent(agent_id)
            || self.agents[agent_id].memory_fault_applied
        {
            return Ok(false);
        }
        self.agents.get_mut(agent_id).unwrap().memory_fault_applied = true;

        let history = self.agents[agent_id].history.clone();
        let result = match spec.fault_type {
            FaultType::MemoryLoss => {
                let policy = if let Some(n) = spec.params.drop_first_n {
                    DropPolicy::DropFirstN { n }
                } else {
                    DropPolicy::DropAgent {
                        agent: spec.params.drop_agent.clone().unwrap_or_default(),
                    }
                };
                drop_memory(&history, &policy)
            }
            FaultType::ContextLengthViolation => {
                violate_context(&history, spec.params.char_budget.unwrap_or(1))
            }
            _ => unreachable!("memory faults are memory loss and context violation"),
        };

        match result {
            Ok(mutated) => {
                let digest = payload_digest(
                    serde_json::to_vec(&mutated).expect("history serializes").as_slice(),
                );
                self.agents.get_mut(agent_id).unwrap().history = mutated;
                let event = TraceEvent::fault_injected(
                    self.event_seq(),
                    &self.task.id,
                    &spec.id,
                    InterceptionPoint::HistoryWindowIngress,
                )
                .with_agent(agent_id)
                .with_digest(digest);
                self.push(event)?;
                Ok(true)
            }
            Err(
                RewriteError::WouldEmptyHistory
                | RewriteError::BudgetNotBinding { .. }
                | RewriteError::UnknownAgent(_),
            ) => {
                // The fault does not bind on this task's history shape.
                self.fault_applicable = false;
                Ok(false)
            }
            Err(other) => Err(SimError::Injection(other.to_string())),
        }
    }

    /// Egress mutation of a produced payload, when the active spec targets
    /// this agent's output or tool call. Returns the (possibly mutated)
    /// payload and whether injection happened.
    fn apply_egress_fault(
        &mut self,
        agent_id: &str,
        payload: String,
    ) -> Result<(String, bool), SimError> {
        let Some(spec) = self.spec else {
            return Ok((payload, false));
        };
        let point = spec.fault_type.interception_point();
        let is_egress = matches!(
            point,
            Some(InterceptionPoint::AgentOutputEgress) | Some(InterceptionPoint::ToolCallEgress)
        );
        if self.skip_injection
            || self.injected
            || !is_egress
            || !spec.target.matches_agent(agent_id)
        {
            return Ok((payload, false));
        }

        let mutated = match (spec.fault_type, spec.effective_mode()) {
            (FaultType::InexecutablePlan | FaultType::CriticalInfoLoss, _) => {
                let output = AgentOutput::text(agent_id, OutputKind::Plan, &payload);
                self.rewrite_delegated(&output, spec)?.content
            }
            (FaultType::Hallucination, _) => {
                let output = AgentOutput::text(agent_id, OutputKind::Reasoning, &payload);
                self.rewrite_delegated(&output, spec)?.content
            }
            (FaultType::ToolSelectionError, FaultMode::Delegated)
            | (FaultType::ParameterFillingError, FaultMode::Delegated) => {
                let call = self.task.tool_call.clone().expect("applicability checked");
                let output = AgentOutput::tool(agent_id, call);
                self.rewrite_delegated(&output, spec)?.content
            }
            (FaultType::ToolSelectionError, FaultMode::Deterministic) => {
                let call = self.task.tool_call.clone().expect("applicability checked");
                let catalog = spec.params.tool_catalog.clone().unwrap_or_default();
                swap_tool_deterministic(&call, &catalog, self.seed)
                    .map_err(|e| SimError::Injection(e.to_string()))?
                    .to_payload()
            }
            (FaultType::ParameterFillingError, FaultMode::Deterministic) => {
                let call = self.task.tool_call.clone().expect("applicability checked");
                match swap_params_deterministic(&call.arguments) {
                    Ok(arguments) => ToolCallData {
                        tool_name: call.tool_name,
                        arguments,
                    }
                    .to_payload(),
                    Err(RewriteError::NotApplicable(_)) => {
                        self.fault_applicable = false;
                        return Ok((call.to_payload(), false));
                    }
                    Err(other) => return Err(SimError::Injection(other.to_string())),
                }
            }
            (FaultType::ParameterFormatError, _) => {
                let call = self.task.tool_call.clone().expect("applicability checked");
                let kind = spec
                    .params
                    .corruption_kind
                    .clone()
                    .expect("validated at parse");
                let bytes = corrupt_format(call.to_payload().as_bytes(), &kind, self.seed)
                    .map_err(|e| SimError::Injection(e.to_string()))?;
                String::from_utf8_lossy(&bytes).into_owned()
            }
            _ => unreachable!("egress faults covered above"),
        };

        self.injected = true;
        let event = TraceEvent::fault_injected(
            self.event_seq(),
            &self.task.id,
            &spec.id,
            point.expect("egress faults have a point"),
        )
        .with_agent(agent_id)
        .with_digest(payload_digest(mutated.as_bytes()));
        self.push(event)?;
        Ok((mutated, true))
    }

    fn rewrite_delegated(
        &mut self,
        output: &AgentOutput,
        spec: &FaultSpec,
    ) -> Result<AgentOutput, SimError> {
        rewrite_semantic(
            output,
            spec.fault_type,
            self.opts.catalog,
            self.opts.endpoint,
            self.opts.max_retries,
            self.seed,
            &self.task.id,
            &spec.id,
            &mut self.sink,
        )
        .map_err(|e| SimError::Injection(e.to_string()))
    }

    /// One agent turn: resolve impairments on the input, synthesize an
    /// output payload, and apply any egress fault.
    fn produce(
        &mut self,
        agent_id: &str,
        input: &SimMessage,
    ) -> Result<(String, Option<Taint>), SimError> {
        let memory_impaired = self.apply_memory_fault(agent_id)?;

        let incoming_unfixed = input.taint.as_ref().map_or(false, |t| !t.fixed);
        let perturbed_pending = {
            let agent = &self.agents[agent_id];
            agent.perturbed && !agent.perturbation_resolved
        };
        let disturbed = self.agents[agent_id].disturbed;
        let impaired = incoming_unfixed || perturbed_pending || memory_impaired || disturbed;

        let mut taint_out = if impaired {
            let spec_id = input
                .taint
                .as_ref()
                .map(|t| t.spec_id.clone())
                .or_else(|| self.spec_id().map(str::to_string))
                .unwrap_or_default();
            let tier = self.agents[agent_id].policy.tier_label;
            let mut fixed = false;
            if self.detect_draw(agent_id) {
                let event = TraceEvent::ft_triggered(self.event_seq(), &self.task.id, tier)
                    .with_agent(agent_id);
                self.push(event)?;
                if self.pool_enabled {
                    // The shared pool retains the uncorrupted context, so a
                    // detected fault is always repairable from it.
                    let trig =
                        TraceEvent::ft_triggered(self.event_seq(), &self.task.id, FtTier::Mechanism)
                            .with_agent(agent_id)
                            .with_detail("source", serde_json::json!("shared_pool"));
                    self.push(trig)?;
                    let fix =
                        TraceEvent::ft_fixed(self.event_seq(), &self.task.id, FtTier::Mechanism)
                            .with_agent(agent_id)
                            .with_detail("source", serde_json::json!("shared_pool"));
                    self.push(fix)?;
                    fixed = true;
                } else if self.fix_draw(agent_id) {
                    let event = TraceEvent::ft_fixed(self.event_seq(), &self.task.id, tier)
                        .with_agent(agent_id);
                    self.push(event)?;
                    fixed = true;
                }
            }
            let agent = self.agents.get_mut(agent_id).unwrap();
            agent.perturbation_resolved = true;
            agent.disturbed = false;
            Some(Taint {
                spec_id,
                fixed,
            })
        } else {
            input.taint.clone()
        };

        // Synthesize the output payload; targeted agents of an action fault
        // produce the task's tool invocation.
        let action_target = self.spec.map_or(false, |spec| {
            spec.fault_type.category() == FaultCategory::Action
                && spec.target.matches_agent(agent_id)
                && !self.skip_injection
        });
        let payload = if action_target {
            self.task
                .tool_call
                .clone()
                .expect("applicability checked")
                .to_payload()
        } else {
            format!("[{agent_id}] {}", input.payload)
        };

        let (payload, injected_now) = self.apply_egress_fault(agent_id, payload)?;
        if injected_now {
            taint_out = Some(Taint::unfixed(&self.spec.expect("injection implies spec").id));
        }
        Ok((payload, taint_out))
    }

    fn success_draw(&mut self, agent_id: &str, taint: &Option<Taint>) -> bool {
        match taint {
            None => true,
            Some(t) => {
                let agent = self.agents.get_mut(agent_id).unwrap();
                let p = if t.fixed {
                    agent.policy.p_succ_given_fix
                } else {
                    agent.policy.p_succ_given_unfixed
                };
                agent.rng.bernoulli(p)
            }
        }
    }

    // -- topology drivers --------------------------------------------------

    fn run_linear(
        &mut self,
        agents: Vec<String>,
        shared_pool: bool,
        input: String,
        taint: Option<Taint>,
    ) -> Result<bool, SimError> {
        self.pool_enabled = shared_pool;
        let first = agents[0].clone();
        let msg = self.make_msg("user", vec![first.clone()], input, taint);
        self.send(&msg)?;
        let Some(mut current) = self.pump(&first)? else {
            return Ok(false);
        };

        for (i, agent_id) in agents.iter().enumerate() {
            let (payload, taint) = self.produce(agent_id, &current)?;
            if i + 1 == agents.len() {
                return Ok(self.success_draw(agent_id, &taint));
            }
            let next = agents[i + 1].clone();
            let msg = self.make_msg(agent_id, vec![next.clone()], payload, taint);
            self.send(&msg)?;
            match self.pump(&next)? {
                Some(delivered) => current = delivered,
                None => return Ok(false),
            }
        }
        unreachable!("pipeline returns at the last agent")
    }

    fn run_critic_loop(
        &mut self,
        generator: String,
        judge: String,
        refiner: String,
        max_iterations: u32,
        input: String,
        taint: Option<Taint>,
    ) -> Result<bool, SimError> {
        let msg = self.make_msg("user", vec![generator.clone()], input, taint);
        self.send(&msg)?;
        let Some(gmsg) = self.pump(&generator)? else {
            return Ok(false);
        };
        let (mut payload, mut current_taint) = self.produce(&generator, &gmsg)?;
        let mut sender = generator.clone();
        let mut detected = false;

        for iteration in 1..=max_iterations {
            let msg = self.make_msg(&sender, vec![judge.clone()], payload.clone(), current_taint.clone());
            self.send(&msg)?;
            let Some(delivered) = self.pump(&judge)? else {
                return Ok(false);
            };
            let taint = delivered.taint.clone();

            match &taint {
                Some(t) if !t.fixed => {
                    if !detected {
                        if !self.detect_draw(&judge) {
                            // The judge accepts the faulty output.
                            return Ok(self.success_draw(&judge, &taint));
                        }
                        detected = true;
                        let tier = self.agents[&judge].policy.tier_label;
                        let event =
                            TraceEvent::ft_triggered(self.event_seq(), &self.task.id, tier)
                                .with_agent(&judge);
                        self.push(event)?;
                    }
                    // Refinement cycle.
                    let to_refiner = self.make_msg(
                        &judge,
                        vec![refiner.clone()],
                        format!("[review {iteration}] {}", delivered.payload),
                        taint.clone(),
                    );
                    self.send(&to_refiner)?;
                    let Some(rmsg) = self.pump(&refiner)? else {
                        return Ok(false);
                    };
                    let repaired = self.fix_draw(&refiner);
                    payload = format!("[{refiner} attempt {iteration}] {}", rmsg.payload);
                    let spec_id = taint.as_ref().map(|t| t.spec_id.clone()).unwrap_or_default();
                    if repaired {
                        let tier = self.agents[&judge].policy.tier_label;
                        let event = TraceEvent::ft_fixed(self.event_seq(), &self.task.id, tier)
                            .with_agent(&refiner);
                        self.push(event)?;
                        current_taint = Some(Taint {
                            spec_id,
                            fixed: true,
                        });
                    } else {
                        current_taint = Some(Taint::unfixed(&spec_id));
                    }
                    sender = refiner.clone();
                }
                _ => {
                    // Clean or already repaired: the judge accepts.
                    return Ok(self.success_draw(&judge, &taint));
                }
            }
        }
        Ok(false)
    }

    fn run_bilateral(
        &mut self,
        user_agent: String,
        assistant: String,
        turn_limit: u32,
        goal_turn: u32,
        input: String,
        taint: Option<Taint>,
    ) -> Result<bool, SimError> {
        let msg = self.make_msg("user", vec![user_agent.clone()], input, taint);
        self.send(&msg)?;
        let Some(umsg) = self.pump(&user_agent)? else {
            return Ok(false);
        };
        let (mut payload, mut current_taint) = self.produce(&user_agent, &umsg)?;

        for turn in 1..=turn_limit {
            let msg = self.make_msg(&user_agent, vec![assistant.clone()], payload, current_taint);
            self.send(&msg)?;
            let Some(amsg) = self.pump(&assistant)? else {
                return Ok(false);
            };
            let (apayload, ataint) = self.produce(&assistant, &amsg)?;
            if turn >= goal_turn && ataint.as_ref().map_or(true, |t| t.fixed) {
                return Ok(self.success_draw(&assistant, &ataint));
            }
            let back = self.make_msg(&assistant, vec![user_agent.clone()], apayload, ataint);
            self.send(&back)?;
            let Some(reply) = self.pump(&user_agent)? else {
                return Ok(false);
            };
            let (upayload, utaint) = self.produce(&user_agent, &reply)?;
            payload = upayload;
            current_taint = utaint;
        }
        Ok(false)
    }

    fn run(mut self) -> Result<TaskRunResult, SimError> {
        self.apply_config_faults()?;
        let (input, taint) = self.prepare_task_input()?;

        let topology = self.opts.scenario.topology.clone();
        let success = match topology {
            Topology::LinearPipeline { agents, shared_pool } => {
                self.run_linear(agents, shared_pool, input, taint)?
            }
            Topology::CriticRefineLoop {
                generator,
                judge,
                refiner,
                max_iterations,
            } => self.run_critic_loop(generator, judge, refiner, max_iterations, input, taint)?,
            Topology::BilateralNegotiation {
                user_agent,
                assistant_agent,
                turn_limit,
                goal_turn,
            } => self.run_bilateral(user_agent, assistant_agent, turn_limit, goal_turn, input, taint)?,
        };

        let counters = self.bus.counters;
        if !counters.balanced() {
            return Err(SimError::Config(format!(
                "bus conservation broken: enqueued {} != processed {} + filtered {} + dropped {}",
                counters.enqueued, counters.processed, counters.filtered,
                counters.dropped_by_loop_guard
            )));
        }
        let event = TraceEvent::task_result(self.event_seq(), &self.task.id, success)
            .with_detail("fault_applicable", serde_json::json!(self.fault_applicable))
            .with_detail(
                "bus",
                serde_json::json!({
                    "enqueued": counters.enqueued,
                    "processed": counters.processed,
                    "filtered": counters.filtered,
                    "dropped_by_loop_guard": counters.dropped_by_loop_guard,
                }),
            );
        self.push(event)?;

        let events = self.sink.into_events();
        let outcome = derive_outcome(&events, self.spec.map(|s| s.id.as_str()))?;
        Ok(TaskRunResult { events, outcome })
    }
}

/// Execute one task under an optional fault spec. `effective_seed` is the
/// per-(spec, task) seed; it is ignored for the baseline pass.
pub fn run_task(
    opts: &SimOptions,
    task: &TaskDescriptor,
    spec: Option<&FaultSpec>,
    effective_seed: u64,
) -> Result<TaskRunResult, SimError> {
    opts.scenario
        .validate()
        .map_err(SimError::Config)?;
    Engine::new(opts, task, spec, effective_seed).run()
}

// ---------------------------------------------------------------------------
// Campaign execution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_id: Option<String>,
    pub sha256: String,
}

/// Campaign manifest: the durable index of every trace file written.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignManifest {
    pub schema_version: u32,
    pub campaign_seed: u64,
    pub injector_identity: String,
    pub entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<String>,
}

#[derive(Debug)]
pub struct CampaignResult {
    pub injector_identity: String,
    pub baseline: Vec<TaskOutcome>,
    /// Outcomes per spec id, in task order.
    pub injected: BTreeMap<String, Vec<TaskOutcome>>,
    pub manifest_path: PathBuf,
}

/// File-system-safe stem for a task or spec id.
pub fn sanitize_file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_task_trace(
    dir: &Path,
    header: TraceHeader,
    result: &TaskRunResult,
) -> Result<(String, TaskOutcome), SimError> {
    let stem = sanitize_file_stem(&header.task_id);
    let path = dir.join(format!("{stem}.jsonl"));
    let mut writer = TraceWriter::create(&path, header)?;
    for event in &result.events {
        writer.append(event.clone())?;
    }
    let outcome = writer
        .finish()?
        .expect("simulated tasks always carry a result");
    debug_assert_eq!(outcome, result.outcome);
    Ok((path.to_string_lossy().into_owned(), outcome))
}

fn file_digest(path: &str) -> Result<String, SimError> {
    let bytes = std::fs::read(path)?;
    Ok(payload_digest(&bytes))
}

/// Run the full campaign: a fault-free baseline pass over every task, then
/// one pass per fault spec. Traces land under `output_dir` (`baseline/` and
/// `specs/<spec_id>/`), indexed by a manifest with per-file digests.
/// Identical configs produce byte-identical traces.
pub fn run_campaign(
    config: &CampaignConfig,
    parallel: usize,
    force: bool,
) -> Result<CampaignResult, SimError> {
    let scenario = config.resolve_scenario()?;
    if !matches!(config.execution_target, ExecutionTarget::Simulator(_)) {
        return Err(SimError::Config(
            "run_campaign requires a simulator execution target".into(),
        ));
    }
    let manifest_path = config.output_dir.join("manifest.json");
    if manifest_path.exists() && !force {
        return Err(SimError::OutputExists(manifest_path));
    }
    std::fs::create_dir_all(&config.output_dir)?;

    let endpoint = config.injector.build()?;
    let catalog = config.load_template_catalog()?;
    let opts = SimOptions {
        scenario: &scenario,
        campaign_seed: config.campaign_seed,
        catalog: &catalog,
        endpoint: endpoint.as_ref(),
        max_retries: config.max_retries,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| SimError::Config(e.to_string()))?;

    let mut entries: Vec<ManifestEntry> = Vec::new();

    let baseline_dir = config.output_dir.join("baseline");
    let baseline: Vec<(String, TaskOutcome)> = pool.install(|| {
        config
            .tasks
            .par_iter()
            .map(|task| {
                let result = run_task(&opts, task, None, 0)?;
                let header = TraceHeader::new(config.campaign_seed, &task.id);
                write_task_trace(&baseline_dir, header, &result)
            })
            .collect::<Result<Vec<_>, SimError>>()
    })?;
    for (path, outcome) in &baseline {
        entries.push(ManifestEntry {
            path: path.clone(),
            task_id: outcome.task_id.clone(),
            spec_id: None,
            sha256: file_digest(path)?,
        });
    }

    let mut injected = BTreeMap::new();
    for spec in &config.fault_specs {
        let spec_dir = config.output_dir.join("specs").join(sanitize_file_stem(&spec.id));
        let results: Vec<(String, TaskOutcome)> = pool.install(|| {
            config
                .tasks
                .par_iter()
                .map(|task| {
                    let seed = config.effective_seed(spec, &task.id);
                    let result = run_task(&opts, task, Some(spec), seed)?;
                    let header = TraceHeader::new(config.campaign_seed, &task.id)
                        .with_spec(&spec.id, spec.fault_type)
                        .with_offline_fallback(spec.offline_fallback());
                    write_task_trace(&spec_dir, header, &result)
                })
                .collect::<Result<Vec<_>, SimError>>()
        })?;
        let mut outcomes = Vec::new();
        for (path, outcome) in results {
            entries.push(ManifestEntry {
                path: path.clone(),
                task_id: outcome.task_id.clone(),
                spec_id: Some(spec.id.clone()),
                sha256: file_digest(&path)?,
            });
            outcomes.push(outcome);
        }
        injected.insert(spec.id.clone(), outcomes);
    }

    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = CampaignManifest {
        schema_version: 1,
        campaign_seed: config.campaign_seed,
        injector_identity: config.injector.identity(),
        entries,
        annotations: None,
    };
    std::fs::write(
        &manifest_path,
        serde_json::to_vec_pretty(&manifest).expect("manifest serializes"),
    )?;

    let outcomes_path = config.output_dir.join("outcomes.json");
    let baseline_outcomes: Vec<TaskOutcome> = baseline.into_iter().map(|(_, o)| o).collect();
    let all = serde_json::json!({
        "baseline": baseline_outcomes,
        "injected": injected,
    });
    std::fs::write(&outcomes_path, serde_json::to_vec_pretty(&all).expect("outcomes serialize"))?;

    Ok(CampaignResult {
        injector_identity: config.injector.identity(),
        baseline: baseline_outcomes,
        injected,
        manifest_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{FaultParams, TargetSelector};
    use scenario::preset_scenario;

    fn ideal_opts<'a>(
        scenario: &'a ScenarioConfig,
        catalog: &'a TemplateCatalog,
        endpoint: &'a dyn InjectorEndpoint,
    ) -> SimOptions<'a> {
        SimOptions {
            scenario,
            campaign_seed: 42,
            catalog,
            endpoint,
            max_retries: 2,
        }
    }

    fn task(id: &str) -> TaskDescriptor {
        TaskDescriptor {
            id: id.into(),
            input: "Sort the revenue table by country".into(),
            tool_call: None,
        }
    }

    #[test]
    fn fault_free_baseline_succeeds_with_no_fault_events() {
        let scenario = preset_scenario("linear_pipeline").unwrap();
        let catalog = TemplateCatalog::builtin();
        let endpoint = crate::injector::DeterministicInjector::new();
        let opts = ideal_opts(&scenario, &catalog, &endpoint);
        let result = run_task(&opts, &task("t1"), None, 0).unwrap();
        assert!(result.outcome.success);
        assert!(result.outcome.ft_summary.is_empty());
        assert!(!result
            .events
            .iter()
            .any(|e| e.kind == crate::trace::EventKind::FaultInjected));
    }

    #[test]
    fn blind_trust_on_every_agent_fails_linear_pipeline() {
        let scenario = preset_scenario("linear_pipeline").unwrap();
        let catalog = TemplateCatalog::builtin();
        let endpoint = crate::injector::DeterministicInjector::new();
        let opts = ideal_opts(&scenario, &catalog, &endpoint);
        let spec = FaultSpec {
            id: "bt".into(),
            fault_type: FaultType::BlindTrust,
            target: TargetSelector::Agent { agent: "*".into() },
            params: FaultParams {
                trusted_agent: Some("planner".into()),
                ..FaultParams::default()
            },
            mode: None,
            seed: None,
        };
        for i in 0..20 {
            let t = task(&format!("t{i}"));
            let result = run_task(&opts, &t, Some(&spec), 1000 + i).unwrap();
            assert!(!result.outcome.success, "task t{i} unexpectedly succeeded");
            assert!(!result.outcome.any_triggered());
        }
    }

    #[test]
    fn critic_loop_with_certain_detection_repairs_plan_fault() {
        let scenario = preset_scenario("critic_refine_loop").unwrap();
        let catalog = TemplateCatalog::builtin();
        let endpoint = crate::injector::DeterministicInjector::new();
        let opts = ideal_opts(&scenario, &catalog, &endpoint);
        let spec = FaultSpec {
            id: "plan".into(),
            fault_type: FaultType::InexecutablePlan,
            target: TargetSelector::Agent {
                agent: "generator".into(),
            },
            params: FaultParams::default(),
            mode: None,
            seed: None,
        };
        let result = run_task(&opts, &task("t1"), Some(&spec), 7).unwrap();
        assert!(result.outcome.success);
        assert!(result.outcome.any_triggered());
        assert!(result.outcome.any_fixed());
    }

    #[test]
    fn identical_runs_are_byte_identical() {
        let scenario = preset_scenario("bilateral_negotiation").unwrap();
        let catalog = TemplateCatalog::builtin();
        let endpoint = crate::injector::DeterministicInjector::new();
        let opts = ideal_opts(&scenario, &catalog, &endpoint);
        let spec = FaultSpec {
            id: "amb".into(),
            fault_type: FaultType::InstructionAmbiguity,
            target: TargetSelector::Agent { agent: "*".into() },
            params: FaultParams::default(),
            mode: None,
            seed: None,
        };
        let a = run_task(&opts, &task("t1"), Some(&spec), 5).unwrap();
        let b = run_task(&opts, &task("t1"), Some(&spec), 5).unwrap();
        let ser_a = serde_json::to_string(&a.events).unwrap();
        let ser_b = serde_json::to_string(&b.events).unwrap();
        assert_eq!(ser_a, ser_b);
        assert_eq!(a.outcome, b.outcome);
    }

    #[test]
    fn action_fault_without_tool_call_is_inapplicable() {
        let scenario = preset_scenario("linear_pipeline").unwrap();
        let catalog = TemplateCatalog::builtin();
        let endpoint = crate::injector::DeterministicInjector::new();
        let opts = ideal_opts(&scenario, &catalog, &endpoint);
        let spec = FaultSpec {
            id: "fmt".into(),
            fault_type: FaultType::ParameterFormatError,
            target: TargetSelector::Agent { agent: "coder".into() },
            params: FaultParams {
                corruption_kind: Some(crate::spec::CorruptionKind::DropClosingDelimiter),
                ..FaultParams::default()
            },
            mode: None,
            seed: None,
        };
        let result = run_task(&opts, &task("t1"), Some(&spec), 3).unwrap();
        assert!(!result.outcome.fault_applicable);
        assert!(result.outcome.success);
        assert!(!result
            .events
            .iter()
            .any(|e| e.kind == crate::trace::EventKind::FaultInjected));
    }
}
