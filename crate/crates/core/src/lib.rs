//! Fault injection and robustness evaluation for LLM-based multi-agent
//! systems.
//!
//! The toolkit injects a fixed catalog of fifteen fault types through three
//! non-invasive mechanisms — prompt modification, interception and response
//! rewriting, and message-routing manipulation — records execution traces,
//! computes robustness metrics, and classifies fault-tolerant behavior into
//! four tiers.
//!
//! Module map:
//! - [`taxonomy`]: the fault catalog and fault→mechanism mapping
//! - [`spec`] / [`campaign`]: fault specs and campaign files
//! - [`prompt`]: system/user prompt corruption
//! - [`rewrite`]: output, tool-call, and history-window mutation
//! - [`injector`]: delegated semantic mutation with integrity checks
//! - [`sim`]: deterministic topology simulation and campaign execution
//! - [`trace`]: append-only trace log and replay
//! - [`metrics`]: robustness score and process-level rates
//! - [`annotate`]: four-tier behavior tags and Cohen's kappa

pub mod annotate;
pub mod campaign;
pub mod injector;
pub mod metrics;
pub mod prompt;
pub mod rewrite;
pub mod rng;
pub mod sim;
pub mod spec;
pub mod taxonomy;
pub mod trace;

/// Concrete `f64` instantiations of the scalar-generic metric types.
pub type Rate = metrics::Rate<f64>;
pub type RsSummary = metrics::RsSummary<f64>;
pub type ProcessMetrics = metrics::ProcessMetrics<f64>;
pub type FaultReport = metrics::FaultReport<f64>;
pub type MetricsReport = metrics::MetricsReport<f64>;
pub type KappaReport = annotate::KappaReport<f64>;

pub use campaign::{parse_campaign, serialize_campaign, CampaignConfig};
pub use spec::{validate_spec, FaultSpec};
pub use taxonomy::{mechanism_of, FaultCategory, FaultType, InjectionMechanism, InterceptionPoint};
pub use trace::{FtTier, TaskOutcome, TraceEvent};
