//! Single entry point: campaign simulation, gateway serving, metric
//! reports, behavior annotation, and the fixture server.
//!
//! Exit codes: 0 success; 1 usage or configuration error; 2 execution
//! error (injection or trace failures); 3 metric or annotation error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use faultline_core::annotate::{
    annotate_llm, annotate_rule_based, kappa_per_tier, BehaviorCatalog, BehaviorTag, JudgeOptions,
};
use faultline_core::campaign::{parse_campaign_file, ExecutionTarget};
use faultline_core::injector::{FixtureFile, HttpEndpoint};
use faultline_core::metrics::{build_report, render_report, ReportFormat, SpecOutcomes};
use faultline_core::sim::{run_campaign, CampaignManifest, SimError};
use faultline_core::taxonomy::FaultType;
use faultline_core::trace::{replay, ReplayedTrace, TaskOutcome};

const EXIT_USAGE: u8 = 1;
const EXIT_EXECUTION: u8 = 2;
const EXIT_METRICS: u8 = 3;

#[derive(Parser)]
#[command(name = "faultline", version, about = "Fault injection and robustness evaluation for multi-agent systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulated campaign: baseline pass plus one pass per fault spec.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Concurrent task simulations.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Overwrite an existing manifest.
        #[arg(long)]
        force: bool,
    },
    /// Serve the intercepting gateway until interrupted.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        listen: String,
        /// Override the config's upstream endpoint.
        #[arg(long)]
        upstream: Option<String>,
        /// Trace output directory (default: <output_dir>/gateway).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute metrics from recorded traces.
    Report {
        /// Directory of injected traces (one subdirectory per spec).
        #[arg(long)]
        traces: PathBuf,
        /// Directory of baseline traces.
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Where report.json and report.txt are written (default: parent of
        /// --traces).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Annotate traces with four-tier behavior tags.
    Annotate {
        #[arg(long, required_unless_present = "kappa")]
        traces: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Rule)]
        mode: Mode,
        /// Judge endpoint base URL (required for judge mode).
        #[arg(long)]
        judge: Option<String>,
        #[arg(long, default_value = "judge")]
        judge_model: String,
        /// Annotation output file (default: <traces>/annotations.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
        /// Compare two annotation files and print Cohen's kappa.
        #[arg(long, num_args = 2, value_names = ["FILE_A", "FILE_B"])]
        kappa: Option<Vec<PathBuf>>,
    },
    /// Serve canned injector/judge responses keyed by request digest.
    Mock {
        #[arg(long)]
        fixtures: PathBuf,
        #[arg(long)]
        listen: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Structured,
    Table,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Rule,
    Judge,
}

struct CmdError {
    code: u8,
    message: String,
}

impl CmdError {
    fn usage(message: impl Into<String>) -> Self {
        CmdError { code: EXIT_USAGE, message: message.into() }
    }

    fn execution(message: impl Into<String>) -> Self {
        CmdError { code: EXIT_EXECUTION, message: message.into() }
    }

    fn metrics(message: impl Into<String>) -> Self {
        CmdError { code: EXIT_METRICS, message: message.into() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), CmdError> {
    match cli.command {
        Command::Simulate { config, out, parallel, force } => cmd_simulate(&config, out, parallel, force),
        Command::Serve { config, listen, upstream, out } => cmd_serve(&config, &listen, upstream, out),
        Command::Report { traces, baseline, format, out } => cmd_report(&traces, &baseline, format, out),
        Command::Annotate { traces, mode, judge, judge_model, out, force, kappa } => {
            cmd_annotate(traces, mode, judge, &judge_model, out, force, kappa)
        }
        Command::Mock { fixtures, listen } => cmd_mock(&fixtures, &listen),
    }
}

fn sim_error(err: SimError) -> CmdError {
    match err {
        SimError::Config(_) | SimError::Campaign(_) | SimError::OutputExists(_) => {
            CmdError::usage(err.to_string())
        }
        SimError::Injection(_) | SimError::Trace(_) | SimError::Io(_) => {
            CmdError::execution(err.to_string())
        }
    }
}

fn cmd_simulate(
    config_path: &Path,
    out: Option<PathBuf>,
    parallel: usize,
    force: bool,
) -> Result<(), CmdError> {
    let mut config =
        parse_campaign_file(config_path).map_err(|e| CmdError::usage(e.to_string()))?;
    if let Some(out) = out {
        config.output_dir = out;
    }
    if !matches!(config.execution_target, ExecutionTarget::Simulator(_)) {
        return Err(CmdError::usage(
            "config targets a gateway; use `faultline serve` for gateway campaigns",
        ));
    }
    let result = run_campaign(&config, parallel, force).map_err(sim_error)?;
    let injected_runs: usize = result.injected.values().map(Vec::len).sum();
    println!(
        "campaign complete: {} baseline tasks, {} injected runs across {} specs",
        result.baseline.len(),
        injected_runs,
        result.injected.len()
    );
    println!("manifest: {}", result.manifest_path.display());
    Ok(())
}

fn cmd_serve(
    config_path: &Path,
    listen: &str,
    upstream: Option<String>,
    out: Option<PathBuf>,
) -> Result<(), CmdError> {
    let mut config =
        parse_campaign_file(config_path).map_err(|e| CmdError::usage(e.to_string()))?;
    match &mut config.execution_target {
        ExecutionTarget::Gateway(target) => {
            if let Some(upstream) = upstream {
                target.upstream = upstream;
            }
            if !target.upstream.starts_with("http://") && !target.upstream.starts_with("https://")
            {
                return Err(CmdError::usage(format!(
                    "invalid upstream URL: {}",
                    target.upstream
                )));
            }
        }
        ExecutionTarget::Simulator(_) => {
            return Err(CmdError::usage(
                "config targets a simulator; use `faultline simulate`",
            ))
        }
    }
    let addr: std::net::SocketAddr = listen
        .parse()
        .map_err(|e| CmdError::usage(format!("invalid listen address {listen}: {e}")))?;
    let trace_dir = out.unwrap_or_else(|| config.output_dir.join("gateway"));

    let state = faultline_gateway::GatewayState::from_campaign(&config, &trace_dir)
        .map_err(|e| CmdError::usage(e.to_string()))?;
    if !state.plan.inapplicable.is_empty() {
        eprintln!(
            "note: routing faults are simulator-only and will not fire at the gateway: {}",
            state.plan.inapplicable.join(", ")
        );
    }

    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| CmdError::execution(format!("runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CmdError::execution(format!("bind {addr}: {e}")))?;
        eprintln!("gateway listening on {addr}, traces under {}", trace_dir.display());
        let manifest = faultline_gateway::serve(state, listener, shutdown_signal())
            .await
            .map_err(|e| CmdError::execution(e.to_string()))?;
        eprintln!("drained; manifest: {}", manifest.display());
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut sig) => {
                sig.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
}

fn collect_trace_files(dir: &Path) -> Result<Vec<PathBuf>, CmdError> {
    let mut files = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| CmdError::execution(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| CmdError::execution(e.to_string()))?;
        let path = entry.path();
        if path.is_dir() {
            files.extend(collect_trace_files(&path)?);
        } else if path.extension().is_some_and(|ext| ext == "jsonl") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn replay_dir(dir: &Path) -> Result<Vec<ReplayedTrace>, CmdError> {
    let files = collect_trace_files(dir)?;
    if files.is_empty() {
        return Err(CmdError::execution(format!(
            "no trace files under {}",
            dir.display()
        )));
    }
    files
        .iter()
        .map(|path| {
            replay(path).map_err(|e| CmdError::execution(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn outcomes_of(traces: &[ReplayedTrace]) -> Result<Vec<TaskOutcome>, CmdError> {
    traces
        .iter()
        .map(|t| {
            t.outcome.clone().ok_or_else(|| {
                CmdError::execution(format!("trace for task {} has no task result", t.header.task_id))
            })
        })
        .collect()
}

fn cmd_report(
    traces_dir: &Path,
    baseline_dir: &Path,
    format: Format,
    out: Option<PathBuf>,
) -> Result<(), CmdError> {
    let baseline_files = collect_trace_files(baseline_dir).unwrap_or_default();
    if baseline_files.is_empty() {
        return Err(CmdError::metrics(format!(
            "empty baseline: no traces under {}",
            baseline_dir.display()
        )));
    }
    let baseline = outcomes_of(&replay_dir(baseline_dir)?)?;

    let injected = replay_dir(traces_dir)?;
    let mut by_spec: std::collections::BTreeMap<String, SpecOutcomes> =
        std::collections::BTreeMap::new();
    for trace in &injected {
        let spec_id = trace.header.spec_id.clone().ok_or_else(|| {
            CmdError::execution(format!(
                "injected trace for task {} carries no spec id",
                trace.header.task_id
            ))
        })?;
        let fault_type: FaultType = trace.header.fault_type.ok_or_else(|| {
            CmdError::execution(format!("trace for spec {spec_id} carries no fault type"))
        })?;
        let outcome = trace.outcome.clone().ok_or_else(|| {
            CmdError::execution(format!("trace for task {} has no task result", trace.header.task_id))
        })?;
        by_spec
            .entry(spec_id.clone())
            .or_insert_with(|| SpecOutcomes {
                spec_id,
                fault_type,
                offline_fallback: trace.header.offline_fallback,
                outcomes: Vec::new(),
            })
            .outcomes
            .push(outcome);
    }
    let specs: Vec<SpecOutcomes> = by_spec.into_values().collect();

    let report = build_report::<f64>(&baseline, &specs, None)
        .map_err(|e| CmdError::metrics(e.to_string()))?;

    let out_dir = out.unwrap_or_else(|| {
        traces_dir
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    std::fs::create_dir_all(&out_dir).map_err(|e| CmdError::execution(e.to_string()))?;
    let json_path = out_dir.join("report.json");
    let table_path = out_dir.join("report.txt");
    std::fs::write(&json_path, render_report(&report, ReportFormat::Structured))
        .map_err(|e| CmdError::execution(e.to_string()))?;
    std::fs::write(&table_path, render_report(&report, ReportFormat::Table))
        .map_err(|e| CmdError::execution(e.to_string()))?;

    let stdout_format = match format {
        Format::Structured => ReportFormat::Structured,
        Format::Table => ReportFormat::Table,
    };
    print!("{}", String::from_utf8_lossy(&render_report(&report, stdout_format)));
    eprintln!("wrote {} and {}", json_path.display(), table_path.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRecord {
    task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spec_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fault_type: Option<FaultType>,
    tag: BehaviorTag,
}

fn cmd_annotate(
    traces: Option<PathBuf>,
    mode: Mode,
    judge: Option<String>,
    judge_model: &str,
    out: Option<PathBuf>,
    force: bool,
    kappa: Option<Vec<PathBuf>>,
) -> Result<(), CmdError> {
    if let Some(files) = kappa {
        return cmd_kappa(&files[0], &files[1]);
    }
    let traces_dir = traces.expect("clap enforces --traces without --kappa");
    if mode == Mode::Judge && judge.is_none() {
        return Err(CmdError::usage("judge mode requires --judge URL"));
    }

    let catalog = BehaviorCatalog::builtin();
    let replayed = replay_dir(&traces_dir)?;
    let judge_endpoint = judge.map(|url| HttpEndpoint::new(&url, judge_model));

    let mut records = Vec::new();
    for trace in &replayed {
        let tag = match mode {
            Mode::Rule => annotate_rule_based(trace, &catalog),
            Mode::Judge => {
                let endpoint = judge_endpoint.as_ref().expect("checked above");
                annotate_llm(trace, &catalog, endpoint, &JudgeOptions::default())
                    .map_err(|e| CmdError::metrics(e.to_string()))?
            }
        };
        records.push(AnnotationRecord {
            task_id: trace.header.task_id.clone(),
            spec_id: trace.header.spec_id.clone(),
            fault_type: trace.header.fault_type,
            tag,
        });
    }

    let out_path = out.unwrap_or_else(|| traces_dir.join("annotations.jsonl"));
    if out_path.exists() && !force {
        return Err(CmdError::usage(format!(
            "{} already exists (use --force to overwrite)",
            out_path.display()
        )));
    }
    let mut body = String::new();
    for record in &records {
        body.push_str(&serde_json::to_string(record).expect("record serializes"));
        body.push('\n');
    }
    std::fs::write(&out_path, body).map_err(|e| CmdError::execution(e.to_string()))?;

    // Record the annotation output in the campaign manifest when one sits
    // next to the trace directory.
    if let Some(parent) = traces_dir.parent() {
        let manifest_path = parent.join("manifest.json");
        if manifest_path.exists() {
            if let Ok(raw) = std::fs::read(&manifest_path) {
                if let Ok(mut manifest) = serde_json::from_slice::<CampaignManifest>(&raw) {
                    manifest.annotations = Some(out_path.to_string_lossy().into_owned());
                    let _ = std::fs::write(
                        &manifest_path,
                        serde_json::to_vec_pretty(&manifest).expect("manifest serializes"),
                    );
                }
            }
        }
    }

    println!("annotated {} traces -> {}", records.len(), out_path.display());
    Ok(())
}

fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>, CmdError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CmdError::metrics(format!("{}: {e}", path.display())))?;
    raw.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            serde_json::from_str(line)
                .map_err(|e| CmdError::metrics(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn cmd_kappa(file_a: &Path, file_b: &Path) -> Result<(), CmdError> {
    let mut a = read_annotations(file_a)?;
    let mut b = read_annotations(file_b)?;
    let key = |r: &AnnotationRecord| (r.task_id.clone(), r.spec_id.clone());
    a.sort_by_key(key);
    b.sort_by_key(key);
    if a.len() != b.len() {
        return Err(CmdError::metrics(format!(
            "annotation files differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    for (ra, rb) in a.iter().zip(&b) {
        if key(ra) != key(rb) {
            return Err(CmdError::metrics(format!(
                "annotation files cover different runs: {:?} vs {:?}",
                key(ra),
                key(rb)
            )));
        }
    }
    let tags_a: Vec<BehaviorTag> = a.into_iter().map(|r| r.tag).collect();
    let tags_b: Vec<BehaviorTag> = b.into_iter().map(|r| r.tag).collect();
    let report = kappa_per_tier::<f64>(&tags_a, &tags_b)
        .map_err(|e| CmdError::metrics(e.to_string()))?;
    let fmt = |rate: faultline_core::Rate| match rate.value() {
        Some(v) => format!("{v:.4}"),
        None => "undef".to_string(),
    };
    println!("kappa mechanism={}", fmt(report.mechanism));
    println!("kappa rule={}", fmt(report.rule));
    println!("kappa prompt={}", fmt(report.prompt));
    println!("kappa reasoning={}", fmt(report.reasoning));
    println!("kappa pooled={:.4}", report.pooled);
    Ok(())
}

fn cmd_mock(fixtures_path: &Path, listen: &str) -> Result<(), CmdError> {
    let raw = std::fs::read_to_string(fixtures_path)
        .map_err(|e| CmdError::usage(format!("{}: {e}", fixtures_path.display())))?;
    let fixtures: FixtureFile =
        serde_json::from_str(&raw).map_err(|e| CmdError::usage(e.to_string()))?;
    let addr: std::net::SocketAddr = listen
        .parse()
        .map_err(|e| CmdError::usage(format!("invalid listen address {listen}: {e}")))?;

    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| CmdError::execution(format!("runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CmdError::execution(format!("bind {addr}: {e}")))?;
        eprintln!("fixture endpoint listening on {addr}");
        faultline_gateway::mock::serve_mock(fixtures, listener, shutdown_signal())
            .await
            .map_err(|e| CmdError::execution(e.to_string()))
    })
}
