//! HTTP/JSON API and the server-sent telemetry stream.

use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::runtime::{OperatorError, Runtime};

/// Default number of entries returned by `/api/llm-log`.
pub const DEFAULT_LOG_LIMIT: usize = 50;

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyBody {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GainsBody {
    pub gains: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetBody {
    pub p_total: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NavigatorBody {
    pub enabled: bool,
}

/// Decodes a JSON request body; the error text is returned to the client.
pub fn parse_body<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> Result<T, String> {
    serde_json::from_slice(bytes).map_err(|e| format!("invalid request body: {e}"))
}

#[derive(Debug, Deserialize)]
struct LogQuery {
    limit: Option<usize>,
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

impl From<OperatorError> for ApiError {
    fn from(e: OperatorError) -> Self {
        bad_request(e.to_string())
    }
}

pub fn router(rt: Arc<Runtime>) -> Router {
    Router::new()
        .route("/api/state", get(state))
        .route("/api/stream", get(stream))
        .route("/api/policy", post(policy))
        .route("/api/gains", post(gains))
        .route("/api/budget", post(budget))
        .route("/api/llm-log", get(llm_log))
        .route("/api/navigator", post(navigator))
        .with_state(rt)
}

async fn state(State(rt): State<Arc<Runtime>>) -> impl IntoResponse {
    Json(rt.state())
}

async fn stream(State(rt): State<Arc<Runtime>>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = rt.subscribe();
    let frames = futures_util::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(frame) => {
                    let event = Event::default()
                        .event("frame")
                        .json_data(&frame)
                        .unwrap_or_else(|_| Event::default().comment("unserializable frame"));
                    return Some((Ok(event), rx));
                }
                // A slow client skips frames rather than slowing anyone down.
                Err(RecvError::Lagged(_)) => continue,
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(frames).keep_alive(KeepAlive::default())
}

async fn policy(State(rt): State<Arc<Runtime>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let b: PolicyBody = parse_body(&body).map_err(bad_request)?;
    rt.set_policy(&b.text)?;
    Ok(Json(json!({ "policy": b.text })))
}

async fn gains(State(rt): State<Arc<Runtime>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let b: GainsBody = parse_body(&body).map_err(bad_request)?;
    rt.set_gains(b.gains.clone())?;
    Ok(Json(json!({ "gains": b.gains })))
}

async fn budget(State(rt): State<Arc<Runtime>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let b: BudgetBody = parse_body(&body).map_err(bad_request)?;
    let applied = rt.set_budget(b.p_total)?;
    Ok(Json(json!({ "requested": b.p_total, "p_total": applied })))
}

async fn llm_log(State(rt): State<Arc<Runtime>>, Query(q): Query<LogQuery>) -> impl IntoResponse {
    Json(rt.llm_log(q.limit.unwrap_or(DEFAULT_LOG_LIMIT)))
}

async fn navigator(State(rt): State<Arc<Runtime>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let b: NavigatorBody = parse_body(&body).map_err(bad_request)?;
    rt.set_navigator_enabled(b.enabled);
    Ok(Json(rt.navigator_status()))
}
