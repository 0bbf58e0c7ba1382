//! Intercepting gateway speaking a chat-completions subset: applies
//! prompt-modification faults on ingress and response-rewriting faults on
//! egress while transparently proxying to an upstream endpoint.
//!
//! Passthrough contract: a request matched by no spec is forwarded with its
//! payload bytes untouched, and the upstream's payload bytes come back
//! untouched (hop metadata excluded). Mutations re-serialize only the
//! bodies they actually change, and every mutation is paired with exactly
//! one fault_injected trace event, flushed only after a successful upstream
//! round trip.

pub mod apply;
pub mod mock;
pub mod plan;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;

use faultline_core::campaign::{AgentMapping, CampaignConfig};
use faultline_core::injector::{InjectorEndpoint, TemplateCatalog};
use faultline_core::sim::{sanitize_file_stem, CampaignManifest, ManifestEntry};
use faultline_core::taxonomy::InterceptionPoint;
use faultline_core::trace::{
    payload_digest, MemorySink, TraceError, TraceEvent, TraceHeader, TraceWriter,
};

use apply::{apply_egress, apply_ingress, ApplyDeps, ApplyError};
use plan::{identify_agent, FaultPlan, PlanError};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error(transparent)]
    Campaign(#[from] faultline_core::campaign::CampaignError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("server error: {0}")]
    Server(String),
}

/// Serialized appender over per-task trace files.
pub struct TraceHub {
    dir: PathBuf,
    campaign_seed: u64,
    writers: BTreeMap<String, TraceWriter<BufWriter<File>>>,
}

impl TraceHub {
    pub fn new(dir: PathBuf, campaign_seed: u64) -> Result<Self, TraceError> {
        std::fs::create_dir_all(&dir)?;
        Ok(TraceHub {
            dir,
            campaign_seed,
            writers: BTreeMap::new(),
        })
    }

    /// Append buffered events to the task's trace, assigning sequence
    /// numbers in arrival order.
    pub fn append_renumbered(
        &mut self,
        task: &str,
        events: Vec<TraceEvent>,
    ) -> Result<(), TraceError> {
        if !self.writers.contains_key(task) {
            let path = self.dir.join(format!("{}.jsonl", sanitize_file_stem(task)));
            let writer = TraceWriter::create(&path, TraceHeader::new(self.campaign_seed, task))?;
            self.writers.insert(task.to_string(), writer);
        }
        let writer = self.writers.get_mut(task).expect("just inserted");
        for mut event in events {
            event.seq = writer.next_seq();
            event.task_id = task.to_string();
            writer.append(event)?;
        }
        writer.flush()
    }

    fn finish(&mut self) -> Result<Vec<(String, PathBuf)>, TraceError> {
        let writers = std::mem::take(&mut self.writers);
        let mut paths = Vec::new();
        for (task, writer) in writers {
            writer.finish()?;
            let path = self.dir.join(format!("{}.jsonl", sanitize_file_stem(&task)));
            paths.push((task, path));
        }
        Ok(paths)
    }
}

pub struct GatewayState {
    pub plan: FaultPlan,
    pub catalog: TemplateCatalog,
    pub endpoint: Arc<dyn InjectorEndpoint>,
    pub injector_identity: String,
    client: reqwest::Client,
    hub: Mutex<TraceHub>,
}

impl GatewayState {
    /// Build the serving state from a gateway-targeted campaign. Traces go
    /// to `trace_dir`.
    pub fn from_campaign(
        config: &CampaignConfig,
        trace_dir: &Path,
    ) -> Result<Arc<GatewayState>, GatewayError> {
        let plan = FaultPlan::from_campaign(config)?;
        let catalog = config.load_template_catalog()?;
        let endpoint: Arc<dyn InjectorEndpoint> = Arc::from(config.injector.build()?);
        let hub = TraceHub::new(trace_dir.to_path_buf(), config.campaign_seed)?;
        Ok(Arc::new(GatewayState {
            plan,
            catalog,
            endpoint,
            injector_identity: config.injector.identity(),
            client: reqwest::Client::new(),
            hub: Mutex::new(hub),
        }))
    }

    /// Drain writers and index the trace files in a manifest. Called on
    /// graceful shutdown.
    pub fn finalize(&self) -> Result<PathBuf, GatewayError> {
        let mut hub = self.hub.lock().expect("hub lock");
        let paths = hub.finish()?;
        let mut entries = Vec::new();
        for (task, path) in paths {
            let bytes = std::fs::read(&path)?;
            entries.push(ManifestEntry {
                path: path.to_string_lossy().into_owned(),
                task_id: task,
                spec_id: None,
                sha256: payload_digest(&bytes),
            });
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = CampaignManifest {
            schema_version: 1,
            campaign_seed: hub.campaign_seed,
            injector_identity: self.injector_identity.clone(),
            entries,
            annotations: None,
        };
        let path = hub.dir.join("manifest.json");
        std::fs::write(
            &path,
            serde_json::to_vec_pretty(&manifest).expect("manifest serializes"),
        )?;
        Ok(path)
    }
}

fn error_response(status: StatusCode, error_type: &str, message: &str) -> Response {
    let body = serde_json::json!({
        "error": { "type": error_type, "message": message }
    });
    (
        status,
        [("content-type", "application/json")],
        serde_json::to_vec(&body).expect("error body serializes"),
    )
        .into_response()
}

fn json_response(status: StatusCode, body: Vec<u8>) -> Response {
    (status, [("content-type", "application/json")], body).into_response()
}

async fn healthz() -> &'static str {
    "ok"
}

async fn chat_completions(
    State(state): State<Arc<GatewayState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let raw = body.to_vec();
    let parsed: serde_json::Value = match serde_json::from_slice(&raw) {
        Ok(value) => value,
        Err(e) => {
            return error_response(
                StatusCode::BAD_REQUEST,
                "malformed_request",
                &format!("body is not valid JSON: {e}"),
            )
        }
    };
    if !parsed.get("messages").map_or(false, |m| m.is_array()) {
        return error_response(
            StatusCode::BAD_REQUEST,
            "malformed_request",
            "request has no messages array",
        );
    }

    let header_name = match &state.plan.mapping {
        AgentMapping::Header { name } => name.clone(),
        AgentMapping::SystemPromptPrefix { .. } => "x-mas-agent".to_string(),
    };
    let header_value = headers
        .get(header_name.as_str())
        .and_then(|v| v.to_str().ok());
    let system_prompt = parsed["messages"]
        .as_array()
        .and_then(|msgs| {
            msgs.iter()
                .find(|m| m.get("role").and_then(|r| r.as_str()) == Some("system"))
        })
        .and_then(|m| m.get("content").and_then(|c| c.as_str()));
    let agent = identify_agent(header_value, system_prompt, &state.plan.mapping);
    // Trace correlation: requests without a task header are traced under a
    // reserved id.
    let task = headers
        .get("x-mas-task")
        .and_then(|v| v.to_str().ok())
        .filter(|s| !s.is_empty())
        .unwrap_or("untracked")
        .to_string();

    let has_ingress = [
        InterceptionPoint::SystemPromptInit,
        InterceptionPoint::UserPromptIngress,
        InterceptionPoint::HistoryWindowIngress,
    ]
    .iter()
    .any(|p| !state.plan.matching(*p, &agent).is_empty());
    let has_egress = [
        InterceptionPoint::AgentOutputEgress,
        InterceptionPoint::ToolCallEgress,
    ]
    .iter()
    .any(|p| !state.plan.matching(*p, &agent).is_empty());

    let mut pending_events: Vec<TraceEvent> = Vec::new();

    // Ingress mutations. Delegated injector calls are blocking, so the
    // whole phase runs off the async workers.
    let upstream_body: Vec<u8> = if has_ingress {
        let st = state.clone();
        let agent2 = agent.clone();
        let task2 = task.clone();
        let value = parsed.clone();
        let joined = tokio::task::spawn_blocking(move || {
            let deps = ApplyDeps {
                catalog: &st.catalog,
                endpoint: st.endpoint.as_ref(),
            };
            let mut working = value;
            let mut sink = MemorySink::new();
            apply_ingress(&mut working, &st.plan, &agent2, &task2, &deps, &mut sink)
                .map(|mutated| (working, sink.into_events(), mutated))
        })
        .await;
        match joined {
            Err(e) => {
                return error_response(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    "internal",
                    &e.to_string(),
                )
            }
            Ok(Err(ApplyError::Malformed(e))) => {
                return error_response(StatusCode::BAD_REQUEST, "malformed_request", &e)
            }
            Ok(Err(ApplyError::Injection(e))) => {
                return error_response(StatusCode::BAD_GATEWAY, "injection_failed", &e)
            }
            Ok(Ok((working, events, mutated))) => {
                pending_events.extend(events);
                if mutated {
                    serde_json::to_vec(&working).expect("mutated body serializes")
                } else {
                    raw.clone()
                }
            }
        }
    } else {
        raw.clone()
    };

    // Forward to the upstream, passing headers through minus hop metadata
    // and gateway-internal headers (credentials pass through untouched and
    // are never logged).
    let url = format!("{}/v1/chat/completions", state.plan.upstream);
    let mut request = state
        .client
        .post(&url)
        .header("content-type", "application/json")
        .body(upstream_body);
    for (name, value) in headers.iter() {
        let lower = name.as_str().to_ascii_lowercase();
        if lower == "host"
            || lower == "content-length"
            || lower == "content-type"
            || lower == "transfer-encoding"
            || lower == "connection"
            || lower.starts_with("x-mas-")
        {
            continue;
        }
        request = request.header(name, value);
    }
    let upstream_response = match request.send().await {
        Ok(response) => response,
        Err(e) => {
            // Transport failure: no injection is recorded for this request.
            return error_response(
                StatusCode::BAD_GATEWAY,
                "upstream_unreachable",
                &e.to_string(),
            );
        }
    };
    let status = StatusCode::from_u16(upstream_response.status().as_u16())
        .unwrap_or(StatusCode::BAD_GATEWAY);
    let response_bytes = match upstream_response.bytes().await {
        Ok(bytes) => bytes.to_vec(),
        Err(e) => {
            return error_response(
                StatusCode::BAD_GATEWAY,
                "upstream_unreachable",
                &e.to_string(),
            )
        }
    };

    // Egress mutations, only on successful, parseable upstream replies.
    let final_bytes: Vec<u8> = if status.is_success() && has_egress {
        match serde_json::from_slice::<serde_json::Value>(&response_bytes) {
            Err(_) => response_bytes,
            Ok(value) => {
                let st = state.clone();
                let agent2 = agent.clone();
                let task2 = task.clone();
                let joined = tokio::task::spawn_blocking(move || {
                    let deps = ApplyDeps {
                        catalog: &st.catalog,
                        endpoint: st.endpoint.as_ref(),
                    };
                    let mut working = value;
                    let mut sink = MemorySink::new();
                    apply_egress(&mut working, &st.plan, &agent2, &task2, &deps, &mut sink)
                        .map(|mutated| (working, sink.into_events(), mutated))
                })
                .await;
                match joined {
                    Err(e) => {
                        return error_response(
                            StatusCode::INTERNAL_SERVER_ERROR,
                            "internal",
                            &e.to_string(),
                        )
                    }
                    Ok(Err(ApplyError::Malformed(e))) => {
                        return error_response(StatusCode::BAD_GATEWAY, "injection_failed", &e)
                    }
                    Ok(Err(ApplyError::Injection(e))) => {
                        return error_response(StatusCode::BAD_GATEWAY, "injection_failed", &e)
                    }
                    Ok(Ok((working, events, mutated))) => {
                        pending_events.extend(events);
                        if mutated {
                            serde_json::to_vec(&working).expect("mutated body serializes")
                        } else {
                            response_bytes
                        }
                    }
                }
            }
        }
    } else {
        response_bytes
    };

    if !pending_events.is_empty() {
        let mut hub = state.hub.lock().expect("hub lock");
        if let Err(e) = hub.append_renumbered(&task, pending_events) {
            return error_response(
                StatusCode::INTERNAL_SERVER_ERROR,
                "trace_error",
                &e.to_string(),
            );
        }
    }

    json_response(status, final_bytes)
}

pub fn router(state: Arc<GatewayState>) -> Router {
    Router::new()
        .route("/v1/chat/completions", post(chat_completions))
        .route("/healthz", get(healthz))
        .with_state(state)
}

/// Serve until `shutdown` resolves, then drain trace writers and write the
/// manifest.
pub async fn serve(
    state: Arc<GatewayState>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<PathBuf, GatewayError> {
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| GatewayError::Server(e.to_string()))?;
    state.finalize()
}
