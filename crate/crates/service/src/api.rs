//! HTTP API.
//!
//! | method | path | body | response |
//! |---|---|---|---|
//! | POST | `/v1/sessions` | [`OpenSession`] | session state |
//! | POST | `/v1/sessions/{id}/turns` | [`PushTurn`] | turn result |
//! | POST | `/v1/sessions/{id}/turns/{idx}/retry` | | turn result |
//! | POST | `/v1/sessions/{id}/finalize` | | call record |
//! | GET | `/v1/sessions/{id}` | | session state |
//! | GET | `/v1/sessions/{id}/events` | | server-sent events |
//! | POST | `/v1/batch` | [`BatchRequest`] | [`BatchReport`] |
//! | GET | `/v1/reports/{id}` | | [`BatchReport`] |
//! | GET | `/v1/healthz` | | `{"status":"ok"}` |
//!
//! A turn whose backend call or parse failed still answers 200, with
//! `"status":"failed"` in the result; retry it through the retry route.
//! Errors are `{"error":{"code":..,"message":..}}`. When a token is
//! configured every route except the health check needs
//! `Authorization: Bearer <token>`.
//!
//! The event stream replays stored events after `Last-Event-ID` (or the
//! `after` query parameter), then follows live ones. Each SSE message has
//! the event's sequence number as its id and its kind as the event name;
//! the stream ends after `record_finalized`.

use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use callsense_core::aggregation::{corpus_rollup, CallRecord, RollupSummary};
use callsense_core::context::ContextPolicy;
use callsense_core::io::to_canonical_json;
use callsense_core::model::{Conversation, Speaker};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast;

use crate::batch::{batch_annotate, BatchManifest, BatchOptions};
use crate::engine::{Engine, EngineError};
use crate::session::{valid_session_id, OpenSession, SessionError, SessionManager};
use crate::store::{Event, EventKind};

#[derive(Clone)]
pub struct AppState {
    pub sessions: Arc<SessionManager>,
    pub engine: Arc<Engine>,
    pub data_dir: PathBuf,
    pub auth_token: Option<String>,
    pub default_backend: String,
    pub default_policy: ContextPolicy,
    pub max_in_flight: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PushTurn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchRequest {
    pub conversations: Vec<Conversation>,
    #[serde(default)]
    pub backend: Option<String>,
    #[serde(default)]
    pub policy: Option<ContextPolicy>,
    /// Generated when absent.
    #[serde(default)]
    pub report_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchReport {
    pub report_id: String,
    pub manifest: BatchManifest,
    pub records: Vec<CallRecord>,
    pub rollup: RollupSummary,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, code) = match &e {
            SessionError::InvalidId(_) => (StatusCode::BAD_REQUEST, "invalid_id"),
            SessionError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            SessionError::UnknownTurn { .. } => (StatusCode::NOT_FOUND, "unknown_turn"),
            SessionError::UnknownBackend(_) => (StatusCode::BAD_REQUEST, "unknown_backend"),
            SessionError::DuplicateSession(_) => (StatusCode::CONFLICT, "duplicate_session"),
            SessionError::Finalized(_) => (StatusCode::CONFLICT, "finalized"),
            SessionError::NoAnnotatedTurns => (StatusCode::CONFLICT, "no_annotated_turns"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status.is_server_error() {
            tracing::error!(error = %e, "session operation failed");
        }
        ApiError::new(status, code, e.to_string())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::UnknownBackend(id) => {
                ApiError::new(StatusCode::BAD_REQUEST, "unknown_backend", format!("unknown backend {id:?}"))
            }
            other => {
                tracing::error!(error = %other, "engine failure");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string())
            }
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: AppState) -> Router {
    let protected = Router::new()
        .route("/v1/sessions", post(open_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/turns", post(push_turn))
        .route("/v1/sessions/{id}/turns/{idx}/retry", post(retry_turn))
        .route("/v1/sessions/{id}/finalize", post(finalize))
        .route("/v1/sessions/{id}/events", get(events))
        .route("/v1/batch", post(batch))
        .route("/v1/reports/{id}", get(report))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/v1/healthz", get(healthz))
        .merge(protected)
        .with_state(state)
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    let Some(token) = &state.auth_token else {
        return next.run(request).await;
    };
    let presented = request
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented == Some(token.as_str()) {
        next.run(request).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response()
    }
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn open_session(
    State(state): State<AppState>,
    Json(request): Json<OpenSession>,
) -> ApiResult<crate::session::SessionState> {
    Ok(Json(state.sessions.open_session(request).await?))
}

async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<crate::session::SessionState> {
    Ok(Json(state.sessions.get(&id).await?))
}

async fn push_turn(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<PushTurn>,
) -> ApiResult<crate::engine::TurnResult> {
    Ok(Json(state.sessions.push_turn(&id, body.speaker, body.text).await?))
}

async fn retry_turn(
    State(state): State<AppState>,
    Path((id, idx)): Path<(String, u32)>,
) -> ApiResult<crate::engine::TurnResult> {
    Ok(Json(state.sessions.retry_turn(&id, idx).await?))
}

async fn finalize(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<CallRecord> {
    Ok(Json(state.sessions.finalize(&id).await?))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    after: Option<u64>,
}

fn event_name(event: &Event) -> &'static str {
    match event.kind {
        EventKind::SessionOpened { .. } => "session_opened",
        EventKind::TurnAdded { .. } => "turn_added",
        EventKind::AnnotationAdded { .. } => "annotation_added",
        EventKind::RecordFinalized { .. } => "record_finalized",
    }
}

fn to_sse(event: &Event) -> SseEvent {
    SseEvent::default()
        .id(event.seq.to_string())
        .event(event_name(event))
        .data(to_canonical_json(event))
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let last_id = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok());
    let after = last_id.or(query.after).unwrap_or(0);
    let (backlog, live) = state.sessions.subscribe(&id, after).await?;
    let finished = backlog
        .iter()
        .any(|e| matches!(e.kind, EventKind::RecordFinalized { .. }));
    let last = backlog.last().map_or(after, |e| e.seq);
    let live = if finished {
        stream::empty().boxed()
    } else {
        live_events(live, last).boxed()
    };
    let stream = stream::iter(backlog).chain(live).map(|e| Ok(to_sse(&e)));
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

/// Live events after `last`, ending with finalization. A lagging receiver
/// ends the stream; the client reconnects with its last id.
fn live_events(rx: broadcast::Receiver<Event>, last: u64) -> impl Stream<Item = Event> {
    stream::unfold((rx, last, false), |(mut rx, last, done)| async move {
        if done {
            return None;
        }
        loop {
            match rx.recv().await {
                Ok(event) if event.seq <= last => continue,
                Ok(event) => {
                    let done = matches!(event.kind, EventKind::RecordFinalized { .. });
                    let seq = event.seq;
                    return Some((event, (rx, seq, done)));
                }
                Err(_) => return None,
            }
        }
    })
}

async fn batch(State(state): State<AppState>, Json(request): Json<BatchRequest>) -> ApiResult<BatchReport> {
    let report_id = request
        .report_id
        .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    if !valid_session_id(&report_id) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_id", format!("invalid report id {report_id:?}")));
    }
    let options = BatchOptions {
        backend: request.backend.unwrap_or_else(|| state.default_backend.clone()),
        policy: request.policy.unwrap_or(state.default_policy),
        max_in_flight: state.max_in_flight,
    };
    state.engine.backend(&options.backend)?;
    let reports = state.data_dir.join("reports");
    let summary_path = reports.join(format!("{report_id}.json"));
    if summary_path.exists() {
        return Err(ApiError::new(StatusCode::CONFLICT, "duplicate_report", format!("report {report_id:?} exists")));
    }
    let engine = state.engine.clone();
    let conversations = request.conversations;
    let out_dir = reports.join(&report_id);
    let id = report_id.clone();
    let report = tokio::task::spawn_blocking(move || -> Result<BatchReport, ApiError> {
        let output = batch_annotate(&engine, &conversations, &options, None)?;
        output
            .write(&out_dir)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
        let report = BatchReport {
            report_id: id,
            rollup: corpus_rollup(&output.records),
            manifest: output.manifest,
            records: output.records,
        };
        std::fs::write(&summary_path, to_canonical_json(&report) + "\n")
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
        Ok(report)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(report))
}

async fn report(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<BatchReport> {
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, "unknown_report", format!("unknown report {id:?}"));
    if !valid_session_id(&id) {
        return Err(not_found());
    }
    let path = state.data_dir.join("reports").join(format!("{id}.json"));
    let raw = tokio::fs::read_to_string(&path).await.map_err(|_| not_found())?;
    let report = serde_json::from_str(&raw)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    Ok(Json(report))
}
