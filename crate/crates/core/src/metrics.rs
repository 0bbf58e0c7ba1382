//! Robustness metrics over task outcomes: the system-level robustness
//! score and the process-level occurrence / local-success / success rates,
//! aggregated per fault type into deterministic reports.
//!
//! The computations are generic over the float type; the crate root exports
//! `f64` aliases.

use std::collections::BTreeMap;

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::taxonomy::FaultType;
use crate::trace::TaskOutcome;

/// A rate that is undefined when its denominator is zero — deliberately
/// distinct from 0.0, which would conflate "never detected" with "detected
/// but never fixed".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rate<F>(pub Option<F>);

impl<F: Float> Rate<F> {
    pub fn defined(value: F) -> Self {
        Rate(Some(value))
    }

    pub fn undefined() -> Self {
        Rate(None)
    }

    pub fn value(&self) -> Option<F> {
        self.0
    }

    pub fn is_defined(&self) -> bool {
        self.0.is_some()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("empty baseline: no task succeeded without faults")]
    EmptyBaseline,
    #[error("baseline-successful task {0} has no injected outcome")]
    MissingInjectedRun(String),
    #[error("empty trace set")]
    EmptyTraceSet,
}

/// Robustness score with its raw counters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsSummary<F> {
    pub rs: F,
    pub t_base: usize,
    pub n_success: usize,
}

fn ratio<F: Float + FromPrimitive>(numerator: usize, denominator: usize) -> F {
    F::from_usize(numerator).expect("count fits float")
        / F::from_usize(denominator).expect("count fits float")
}

/// Fraction of baseline-successful tasks that still succeed under the
/// fault. Tasks failing at baseline are excluded entirely, so the score is
/// in [0, 1] by construction. When a task has several injected runs, it
/// counts as surviving only if all of them succeed.
pub fn robustness_score<F: Float + FromPrimitive>(
    baseline: &[TaskOutcome],
    injected: &[TaskOutcome],
) -> Result<RsSummary<F>, MetricsError> {
    let t_base: Vec<&str> = baseline
        .iter()
        .filter(|o| o.success)
        .map(|o| o.task_id.as_str())
        .collect();
    if t_base.is_empty() {
        return Err(MetricsError::EmptyBaseline);
    }

    let mut injected_success: BTreeMap<&str, bool> = BTreeMap::new();
    for outcome in injected {
        injected_success
            .entry(outcome.task_id.as_str())
            .and_modify(|s| *s &= outcome.success)
            .or_insert(outcome.success);
    }

    let mut n_success = 0usize;
    for task in &t_base {
        match injected_success.get(task) {
            Some(true) => n_success += 1,
            Some(false) => {}
            None => return Err(MetricsError::MissingInjectedRun(task.to_string())),
        }
    }
    Ok(RsSummary {
        rs: ratio(n_success, t_base.len()),
        t_base: t_base.len(),
        n_success,
    })
}

/// Occurrence, local-success, and end-to-end success rates with raw
/// counters. A task counts as triggered if any tier activated at least
/// once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessMetrics<F> {
    pub occurrence: F,
    pub local_success: Rate<F>,
    pub success: Rate<F>,
    pub n_total: usize,
    pub n_trigger: usize,
    pub n_fixed: usize,
    pub n_final_success: usize,
}

pub fn process_metrics<F: Float + FromPrimitive>(
    outcomes: &[TaskOutcome],
) -> Result<ProcessMetrics<F>, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyTraceSet);
    }
    let n_total = outcomes.len();
    let n_trigger = outcomes.iter().filter(|o| o.any_triggered()).count();
    let n_fixed = outcomes.iter().filter(|o| o.any_fixed()).count();
    let n_final_success = outcomes
        .iter()
        .filter(|o| o.any_triggered() && o.success)
        .count();
    assert!(n_fixed <= n_trigger, "fixed tasks exceed triggered tasks");
    assert!(n_trigger <= n_total, "triggered tasks exceed total tasks");

    let (local_success, success) = if n_trigger == 0 {
        (Rate::undefined(), Rate::undefined())
    } else {
        (
            Rate::defined(ratio(n_fixed, n_trigger)),
            Rate::defined(ratio(n_final_success, n_trigger)),
        )
    };
    Ok(ProcessMetrics {
        occurrence: ratio(n_trigger, n_total),
        local_success,
        success,
        n_total,
        n_trigger,
        n_fixed,
        n_final_success,
    })
}

/// Injected outcomes of one fault spec, as fed into report building.
#[derive(Debug, Clone)]
pub struct SpecOutcomes {
    pub spec_id: String,
    pub fault_type: FaultType,
    pub offline_fallback: bool,
    pub outcomes: Vec<TaskOutcome>,
}

/// One report row: everything measured for one fault type.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaultReport<F> {
    pub fault_type: FaultType,
    pub spec_ids: Vec<String>,
    /// True when any contributing spec ran a semantic fault in
    /// deterministic (offline fallback) mode.
    pub offline_fallback: bool,
    pub rs: RsSummary<F>,
    /// Process metrics over all injected tasks.
    pub all_tasks: ProcessMetrics<F>,
    /// Process metrics restricted to tasks where the fault was applicable;
    /// absent when every task was inapplicable.
    pub applicable_only: Option<ProcessMetrics<F>>,
    pub inapplicable_tasks: usize,
    pub applicability_note: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport<F> {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injector_identity: Option<String>,
    pub rows: Vec<FaultReport<F>>,
}

/// Aggregate per-spec outcomes into one row per fault type, in catalog
/// order. Memory-loss message counting note: drop counts refer to
/// messages, not conversation turns.
pub fn build_report<F: Float + FromPrimitive>(
    baseline: &[TaskOutcome],
    specs: &[SpecOutcomes],
    injector_identity: Option<String>,
) -> Result<MetricsReport<F>, MetricsError> {
    let mut rows = Vec::new();
    for fault_type in FaultType::CATALOG {
        let contributing: Vec<&SpecOutcomes> =
            specs.iter().filter(|s| s.fault_type == fault_type).collect();
        if contributing.is_empty() {
            continue;
        }
        let mut pooled: Vec<TaskOutcome> = Vec::new();
        let mut spec_ids = Vec::new();
        let mut offline_fallback = false;
        for spec in &contributing {
            pooled.extend(spec.outcomes.iter().cloned());
            spec_ids.push(spec.spec_id.clone());
            offline_fallback |= spec.offline_fallback;
        }
        let rs = robustness_score(baseline, &pooled)?;
        let all_tasks = process_metrics(&pooled)?;
        let applicable: Vec<TaskOutcome> = pooled
            .iter()
            .filter(|o| o.fault_applicable)
            .cloned()
            .collect();
        let inapplicable_tasks = pooled.len() - applicable.len();
        let applicable_only = if applicable.is_empty() {
            None
        } else {
            Some(process_metrics(&applicable)?)
        };
        let applicability_note = if inapplicable_tasks == 0 {
            "all tasks applicable".to_string()
        } else {
            format!(
                "{inapplicable_tasks} of {} tasks excluded as fault-inapplicable",
                pooled.len()
            )
        };
        rows.push(FaultReport {
            fault_type,
            spec_ids,
            offline_fallback,
            rs,
            all_tasks,
            applicable_only,
            inapplicable_tasks,
            applicability_note,
        });
    }
    Ok(MetricsReport {
        schema_version: 1,
        injector_identity,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Structured,
    Table,
}

fn fmt_rate<F: Float + std::fmt::Display>(rate: &Rate<F>) -> String {
    match rate.value() {
        Some(v) => format!("{:.4}", v.to_f64().unwrap_or(f64::NAN)),
        None => "undef".to_string(),
    }
}

/// Render a report deterministically: identical inputs produce identical
/// bytes.
pub fn render_report<F: Float + FromPrimitive + std::fmt::Display + Serialize>(
    report: &MetricsReport<F>,
    format: ReportFormat,
) -> Vec<u8> {
    match format {
        ReportFormat::Structured => {
            let mut bytes = serde_json::to_vec_pretty(report).expect("report serializes");
            bytes.push(b'\n');
            bytes
        }
        ReportFormat::Table => {
            let mut out = String::new();
            out.push_str(&format!(
                "{:<32} {:>8} {:>8} {:>8} {:>8}  {:<28} {}\n",
                "fault_type", "RS", "O", "L", "S", "counters", "notes"
            ));
            out.push_str(&"-".repeat(110));
            out.push('\n');
            for row in &report.rows {
                let counters = format!(
                    "base={}/{} trig={} fix={} win={}",
                    row.rs.n_success,
                    row.rs.t_base,
                    row.all_tasks.n_trigger,
                    row.all_tasks.n_fixed,
                    row.all_tasks.n_final_success,
                );
                let mut notes = row.applicability_note.clone();
                if row.offline_fallback {
                    notes.push_str("; offline_fallback");
                }
                out.push_str(&format!(
                    "{:<32} {:>8.4} {:>8} {:>8} {:>8}  {:<28} {}\n",
                    row.fault_type.name(),
                    row.rs.rs.to_f64().unwrap_or(f64::NAN),
                    format!("{:.4}", row.all_tasks.occurrence.to_f64().unwrap_or(f64::NAN)),
                    fmt_rate(&row.all_tasks.local_success),
                    fmt_rate(&row.all_tasks.success),
                    counters,
                    notes,
                ));
            }
            if let Some(identity) = &report.injector_identity {
                out.push_str(&format!("injector: {identity}\n"));
            }
            out.into_bytes()
        }
    }
}
