//! Fixture endpoint: serves canned chat-completions responses keyed by
//! request digest. The digest covers the request's messages and seed, the
//! same canonical form the in-process fixture endpoint uses, so fixtures
//! authored against one work against the other. Identical requests always
//! get identical bytes; unknown digests get a deterministic 404 echoing
//! the digest.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;

use faultline_core::injector::{ChatMessage, FixtureFile, InjectorRequest};

use crate::GatewayError;

struct MockState {
    entries: BTreeMap<String, String>,
}

fn json_response(status: StatusCode, body: serde_json::Value) -> Response {
    (
        status,
        [("content-type", "application/json")],
        serde_json::to_vec(&body).expect("body serializes"),
    )
        .into_response()
}

async fn completions(State(state): State<Arc<MockState>>, body: Bytes) -> Response {
    let parsed: serde_json::Value = match serde_json::from_slice(&body) {
        Ok(value) => value,
        Err(e) => {
            return json_response(
                StatusCode::BAD_REQUEST,
                serde_json::json!({"error": {"type": "malformed_request", "message": e.to_string()}}),
            )
        }
    };
    let messages: Vec<ChatMessage> = match parsed
        .get("messages")
        .map(|m| serde_json::from_value(m.clone()))
    {
        Some(Ok(messages)) => messages,
        _ => {
            return json_response(
                StatusCode::BAD_REQUEST,
                serde_json::json!({"error": {"type": "malformed_request", "message": "messages missing or malformed"}}),
            )
        }
    };
    let seed = parsed.get("seed").and_then(|s| s.as_u64()).unwrap_or(0);
    let digest = InjectorRequest { messages, seed }.digest();

    match state.entries.get(&digest) {
        Some(response) => json_response(
            StatusCode::OK,
            serde_json::json!({
                "choices": [{
                    "index": 0,
                    "message": {"role": "assistant", "content": response}
                }]
            }),
        ),
        None => json_response(
            StatusCode::NOT_FOUND,
            serde_json::json!({"error": {"type": "unknown_digest", "digest": digest}}),
        ),
    }
}

async fn healthz() -> &'static str {
    "ok"
}

pub fn mock_router(fixtures: FixtureFile) -> Router {
    let state = Arc::new(MockState {
        entries: fixtures
            .entries
            .into_iter()
            .map(|e| (e.digest, e.response))
            .collect(),
    });
    Router::new()
        .route("/v1/chat/completions", post(completions))
        .route("/healthz", get(healthz))
        .with_state(state)
}

pub async fn serve_mock(
    fixtures: FixtureFile,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), GatewayError> {
    axum::serve(listener, mock_router(fixtures))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| GatewayError::Server(e.to_string()))
}
