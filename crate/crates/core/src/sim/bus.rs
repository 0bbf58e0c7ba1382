//! In-process message bus: FIFO delivery, routing-fault application, and
//! the conservation counters every run must balance.
//!
//! Conservation invariant: every enqueued delivery is eventually counted as
//! exactly one of processed, filtered, or dropped by a loop guard.

use std::collections::VecDeque;

use crate::spec::FaultSpec;
use crate::taxonomy::FaultType;

/// Fault state carried by a message: which spec corrupted its lineage and
/// whether some agent repaired it locally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taint {
    pub spec_id: String,
    pub fixed: bool,
}

impl Taint {
    pub fn unfixed(spec_id: &str) -> Self {
        Taint {
            spec_id: spec_id.to_string(),
            fixed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimMessage {
    pub id: u64,
    pub sender: String,
    /// Original recipients, before any routing manipulation.
    pub intended: Vec<String>,
    pub payload: String,
    /// Delivery count along this message's chain; incremented per delivery.
    pub hop: u32,
    pub taint: Option<Taint>,
}

/// What the receiving side may notice about a manipulated delivery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anomaly {
    /// A storm copy beyond the first.
    Duplicate,
    /// A message redirected back to its sender.
    Cyclic,
    /// A broadcast-amplified delivery to a non-intended agent.
    Irrelevant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub msg: SimMessage,
    pub recipient: String,
    pub anomaly: Option<Anomaly>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BusCounters {
    pub enqueued: u64,
    pub processed: u64,
    pub filtered: u64,
    pub dropped_by_loop_guard: u64,
}

impl BusCounters {
    pub fn balanced(&self) -> bool {
        self.enqueued == self.processed + self.filtered + self.dropped_by_loop_guard
    }
}

/// One planned delivery produced by routing-fault application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedDelivery {
    pub recipient: String,
    pub anomaly: Option<Anomaly>,
}

/// Apply a routing fault to a message about to be sent. Returns the
/// delivery set; when the spec does not match the message's edges, the
/// intended deliveries come back unchanged.
pub fn apply_routing_fault(
    spec: &FaultSpec,
    msg: &SimMessage,
    all_agents: &[String],
) -> Vec<PlannedDelivery> {
    let matched: Vec<&String> = msg
        .intended
        .iter()
        .filter(|r| spec.target.matches_edge(&msg.sender, r))
        .collect();
    if matched.is_empty() {
        return msg
            .intended
            .iter()
            .map(|r| PlannedDelivery {
                recipient: r.clone(),
                anomaly: None,
            })
            .collect();
    }

    match spec.fault_type {
        FaultType::MessageCycle => {
            // Redirect matched deliveries back to the sender; unmatched
            // recipients still get theirs.
            let mut out = vec![PlannedDelivery {
                recipient: msg.sender.clone(),
                anomaly: Some(Anomaly::Cyclic),
            }];
            out.extend(msg.intended.iter().filter(|r| !matched.contains(r)).map(|r| {
                PlannedDelivery {
                    recipient: r.clone(),
                    anomaly: None,
                }
            }));
            out
        }
        FaultType::MessageStorm => {
            let factor = spec.params.replication_factor.unwrap_or(2).max(1);
            let mut out = Vec::new();
            for recipient in &msg.intended {
                if matched.contains(&recipient) {
                    for copy in 0..factor {
                        out.push(PlannedDelivery {
                            recipient: recipient.clone(),
                            anomaly: (copy > 0).then_some(Anomaly::Duplicate),
                        });
                    }
                } else {
                    out.push(PlannedDelivery {
                        recipient: recipient.clone(),
                        anomaly: None,
                    });
                }
            }
            out
        }
        FaultType::MessageBroadcastAmplification => {
            let mut out: Vec<PlannedDelivery> = msg
                .intended
                .iter()
                .map(|r| PlannedDelivery {
                    recipient: r.clone(),
                    anomaly: None,
                })
                .collect();
            for agent in all_agents {
                if !msg.intended.contains(agent) && *agent != msg.sender {
                    out.push(PlannedDelivery {
                        recipient: agent.clone(),
                        anomaly: Some(Anomaly::Irrelevant),
                    });
                }
            }
            out
        }
        _ => msg
            .intended
            .iter()
            .map(|r| PlannedDelivery {
                recipient: r.clone(),
                anomaly: None,
            })
            .collect(),
    }
}

/// FIFO bus over all agents of one task run.
#[derive(Debug, Default)]
pub struct Bus {
    queue: VecDeque<Delivery>,
    pub counters: BusCounters,
    next_msg_id: u64,
}

impl Bus {
    pub fn new() -> Self {
        Bus::default()
    }

    pub fn next_msg_id(&mut self) -> u64 {
        let id = self.next_msg_id;
        self.next_msg_id += 1;
        id
    }

    /// Enqueue the delivery set for a message, applying the routing fault
    /// when one is active. Returns the planned deliveries for tracing.
    pub fn send(
        &mut self,
        msg: &SimMessage,
        routing_spec: Option<&FaultSpec>,
        all_agents: &[String],
    ) -> Vec<PlannedDelivery> {
        let planned = match routing_spec {
            Some(spec) => apply_routing_fault(spec, msg, all_agents),
            None => msg
                .intended
                .iter()
                .map(|r| PlannedDelivery {
                    recipient: r.clone(),
                    anomaly: None,
                })
                .collect(),
        };
        for delivery in &planned {
            let mut delivered = msg.clone();
            delivered.hop = msg.hop + 1;
            self.queue.push_back(Delivery {
                msg: delivered,
                recipient: delivery.recipient.clone(),
                anomaly: delivery.anomaly,
            });
            self.counters.enqueued += 1;
        }
        planned
    }

    /// Enqueue a single delivery directly, bypassing routing faults (used
    /// when a guard or an agent breaks a cycle and restores the intended
    /// route).
    pub fn enqueue_direct(&mut self, msg: SimMessage, recipient: &str) {
        self.queue.push_back(Delivery {
            msg,
            recipient: recipient.to_string(),
            anomaly: None,
        });
        self.counters.enqueued += 1;
    }

    pub fn pop(&mut self) -> Option<Delivery> {
        self.queue.pop_front()
    }

    pub fn mark_processed(&mut self) {
        self.counters.processed += 1;
    }

    pub fn mark_filtered(&mut self) {
        self.counters.filtered += 1;
    }

    pub fn mark_dropped(&mut self) {
        self.counters.dropped_by_loop_guard += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{FaultParams, TargetSelector};

    fn msg(sender: &str, to: &[&str]) -> SimMessage {
        SimMessage {
            id: 0,
            sender: sender.into(),
            intended: to.iter().map(|s| s.to_string()).collect(),
            payload: "p".into(),
            hop: 0,
            taint: None,
        }
    }

    fn routing_spec(fault_type: FaultType, sender: &str, recipient: &str, factor: Option<u32>) -> FaultSpec {
        FaultSpec {
            id: "f1".into(),
            fault_type,
            target: TargetSelector::Edge {
                sender: sender.into(),
                recipient: recipient.into(),
            },
            params: FaultParams {
                replication_factor: factor,
                ..FaultParams::default()
            },
            mode: None,
            seed: None,
        }
    }

    #[test]
    fn storm_enqueues_exactly_factor_deliveries() {
        let spec = routing_spec(FaultType::MessageStorm, "a", "b", Some(3));
        let planned = apply_routing_fault(&spec, &msg("a", &["b"]), &["a".into(), "b".into()]);
        assert_eq!(planned.len(), 3);
        assert!(planned.iter().all(|d| d.recipient == "b"));
        assert_eq!(planned.iter().filter(|d| d.anomaly == Some(Anomaly::Duplicate)).count(), 2);
    }

    #[test]
    fn cycle_redirects_to_sender() {
        let spec = routing_spec(FaultType::MessageCycle, "a", "b", None);
        let planned = apply_routing_fault(&spec, &msg("a", &["b"]), &["a".into(), "b".into()]);
        assert_eq!(planned.len(), 1);
        assert_eq!(planned[0].recipient, "a");
        assert_eq!(planned[0].anomaly, Some(Anomaly::Cyclic));
    }

    #[test]
    fn broadcast_adds_all_non_recipients() {
        let spec = routing_spec(FaultType::MessageBroadcastAmplification, "a", "b", None);
        let agents: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let planned = apply_routing_fault(&spec, &msg("a", &["b"]), &agents);
        let recipients: Vec<&str> = planned.iter().map(|d| d.recipient.as_str()).collect();
        assert_eq!(recipients, vec!["b", "c", "d"]);
        assert_eq!(planned[0].anomaly, None);
        assert!(planned[1..].iter().all(|d| d.anomaly == Some(Anomaly::Irrelevant)));
    }

    #[test]
    fn unmatched_edge_passes_through() {
        let spec = routing_spec(FaultType::MessageStorm, "x", "y", Some(5));
        let planned = apply_routing_fault(&spec, &msg("a", &["b"]), &["a".into(), "b".into()]);
        assert_eq!(planned.len(), 1);
        assert_eq!(planned[0].anomaly, None);
    }

    #[test]
    fn counters_balance_after_simple_flow() {
        let mut bus = Bus::new();
        let m = msg("a", &["b"]);
        bus.send(&m, None, &["a".into(), "b".into()]);
        assert_eq!(bus.counters.enqueued, 1);
        let d = bus.pop().unwrap();
        assert_eq!(d.recipient, "b");
        assert_eq!(d.msg.hop, 1);
        bus.mark_processed();
        assert!(bus.counters.balanced());
    }
}
