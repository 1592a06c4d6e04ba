//! HTTP/JSON API under `/api/v1`.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use petromatch_core::exec::ExecMode;
use petromatch_core::optimizer::Acquisition;
use petromatch_core::pipeline::{
    checkpoint_view, metric_rows, report_json, report_markdown, CheckpointView, MetricRow, Phase, PipelineState,
    RunOptions, ToolCall,
};
use petromatch_core::simulator::Backend;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::input::{parse_deck, parse_observations, Diagnostic};
use crate::sessions::{NewSession, RunStatus, Session, SessionError, SessionManager, Snapshot};

pub fn router(manager: Arc<SessionManager>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/cancel", post(cancel))
        .route("/sessions/{id}/checkpoint", get(get_checkpoint).patch(patch_checkpoint))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/transcript", get(transcript))
        .route("/sessions/{id}/report", get(report))
        .with_state(manager);
    Router::new().nest("/api/v1", api)
}

pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": code, "message": message.into() }),
        }
    }

    fn bad_input(diagnostics: Vec<Diagnostic>) -> Self {
        let message = diagnostics.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ");
        Self {
            status: StatusCode::BAD_REQUEST,
            body: json!({ "error": "bad_input", "message": message, "diagnostics": diagnostics }),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, code) = match &e {
            SessionError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            SessionError::Busy => (StatusCode::CONFLICT, "busy"),
            SessionError::IllegalPhase(_) => (StatusCode::UNPROCESSABLE_ENTITY, "illegal_phase"),
            SessionError::NotAtCheckpoint(_) => (StatusCode::CONFLICT, "not_at_checkpoint"),
            SessionError::VersionConflict { .. } => (StatusCode::CONFLICT, "version_conflict"),
            SessionError::InvalidEdit(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_edit"),
            SessionError::NotFinished(_) => (StatusCode::CONFLICT, "not_finished"),
            SessionError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn session_json(session: &Session, snap: &Snapshot) -> Value {
    let state = &snap.state;
    json!({
        "id": session.id,
        "created_at": session.created_at,
        "status": snap.status(),
        "phase": state.phase,
        "history": state.history,
        "checkpoint": checkpoint_view(state).filter(|_| !snap.running).map(|v| v.kind),
        "checkpoint_version": state.checkpoint_version,
        "evaluations": state.evaluations.len(),
        "budget": state.optimizer_config.as_ref().map(|c| c.n_total),
        "initial_metric": state.initial_metric,
        "best_metric": state.best.as_ref().map(|b| b.metric),
        "failure": state.failure,
    })
}

#[derive(Deserialize)]
struct CreateSession {
    deck: String,
    #[serde(default = "default_deck_name")]
    deck_name: String,
    #[serde(default)]
    includes: BTreeMap<String, String>,
    /// Observation CSV text: `time_days,QTY:WELL,...`.
    observations: String,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    budget: Option<usize>,
    #[serde(default)]
    backend: Option<Backend>,
    #[serde(default)]
    exec: Option<ExecMode>,
}

fn default_deck_name() -> String {
    "main.DATA".into()
}

async fn create_session(
    State(manager): State<Arc<SessionManager>>,
    body: Result<Json<CreateSession>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let Json(body) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))?;
    let mut diagnostics = Vec::new();
    let deck = parse_deck(&body.deck_name, &body.deck, &body.includes)
        .map_err(|d| diagnostics.push(d))
        .ok();
    let observations = parse_observations(&body.observations)
        .map_err(|d| diagnostics.push(d))
        .ok();
    let (Some(deck), Some(observations)) = (deck, observations) else {
        return Err(ApiError::bad_input(diagnostics));
    };
    let mut deck_files = body.includes.clone();
    deck_files.insert(body.deck_name.clone(), body.deck.clone());
    let options = RunOptions {
        seed: body.seed,
        budget: body.budget,
        exec: body.exec.unwrap_or_default(),
        ..RunOptions::default()
    };
    let manager2 = manager.clone();
    let session = tokio::task::spawn_blocking(move || {
        manager2.create(NewSession {
            deck,
            deck_files,
            observations,
            observations_csv: body.observations,
            options,
            backend: body.backend.unwrap_or_default(),
        })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok((StatusCode::CREATED, Json(session_json(&session, &session.snapshot()))))
}

async fn list_sessions(State(manager): State<Arc<SessionManager>>) -> Json<Value> {
    let all: Vec<Value> = manager.list().iter().map(|s| session_json(s, &s.snapshot())).collect();
    Json(json!({ "sessions": all }))
}

async fn get_session(State(manager): State<Arc<SessionManager>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = manager.get(&id)?;
    Ok(Json(session_json(&session, &session.snapshot())))
}

#[derive(Deserialize, Default)]
struct AdvanceBody {
    #[serde(default)]
    until: Option<Phase>,
    /// Hold the reply until the run pauses.
    #[serde(default)]
    wait: bool,
}

async fn advance(
    State(manager): State<Arc<SessionManager>>,
    Path(id): Path<String>,
    body: Option<Json<AdvanceBody>>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let body = body.map(|Json(b)| b).unwrap_or_default();
    let session = manager.get(&id)?;
    let mut rx = session.subscribe();
    manager.advance(&session, body.until).await?;
    if !body.wait {
        return Ok((StatusCode::ACCEPTED, Json(session_json(&session, &session.snapshot()))));
    }
    let snap = rx
        .wait_for(|s| !s.running)
        .await
        .map(|s| s.clone())
        .unwrap_or_else(|_| session.snapshot());
    Ok((StatusCode::OK, Json(session_json(&session, &snap))))
}

async fn cancel(State(manager): State<Arc<SessionManager>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = manager.get(&id)?;
    manager.cancel(&session);
    Ok(Json(session_json(&session, &session.snapshot())))
}

fn view_json(view: &CheckpointView) -> Value {
    serde_json::to_value(view).expect("view serializes")
}

async fn get_checkpoint(State(manager): State<Arc<SessionManager>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = manager.get(&id)?;
    let snap = session.snapshot();
    match checkpoint_view(&snap.state).filter(|_| !snap.running) {
        Some(view) => Ok(Json(view_json(&view))),
        None => Err(SessionError::NotAtCheckpoint(snap.status()).into()),
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct OptimizerPatch {
    n_initial: Option<usize>,
    n_total: Option<usize>,
    acquisition: Option<Acquisition>,
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointPatch {
    version: u64,
    /// Shorthand for `set_bounds` edits: name to `[lower, upper]`.
    #[serde(default)]
    bounds: BTreeMap<String, [f64; 2]>,
    /// Parameters to drop.
    #[serde(default)]
    remove: Vec<String>,
    #[serde(default)]
    edits: Vec<ToolCall>,
    #[serde(default)]
    optimizer: Option<OptimizerPatch>,
    #[serde(default)]
    approve: bool,
}

impl CheckpointPatch {
    fn calls(self) -> Vec<ToolCall> {
        let mut calls: Vec<ToolCall> = self
            .bounds
            .into_iter()
            .map(|(name, [lower, upper])| ToolCall::SetBounds {
                name,
                lower,
                upper,
                initial: None,
            })
            .collect();
        calls.extend(self.remove.into_iter().map(|name| ToolCall::RemoveParameter { name }));
        calls.extend(self.edits);
        if let Some(o) = self.optimizer {
            calls.push(ToolCall::UpdateOptimizer {
                n_initial: o.n_initial,
                n_total: o.n_total,
                acquisition: o.acquisition,
                seed: o.seed,
            });
        }
        calls
    }
}

async fn patch_checkpoint(
    State(manager): State<Arc<SessionManager>>,
    Path(id): Path<String>,
    body: Result<Json<CheckpointPatch>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(patch) =
        body.map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_edit", e.body_text()))?;
    let session = manager.get(&id)?;
    let (version, approve) = (patch.version, patch.approve);
    let snap = manager.checkpoint(&session, version, &patch.calls(), approve).await?;
    let mut out = session_json(&session, &snap);
    out["view"] = checkpoint_view(&snap.state).map_or(Value::Null, |v| view_json(&v));
    Ok(Json(out))
}

#[derive(Deserialize, Default)]
struct MetricsQuery {
    #[serde(default)]
    since: usize,
    /// Long-poll: seconds to wait for new rows when none are ready.
    #[serde(default)]
    wait: Option<f64>,
    /// `sse` forces an event stream regardless of the Accept header.
    #[serde(default)]
    stream: Option<String>,
}

fn rows_after(state: &PipelineState, since: usize) -> Vec<MetricRow> {
    metric_rows(state).into_iter().filter(|r| r.iter > since).collect()
}

async fn metrics(
    State(manager): State<Arc<SessionManager>>,
    Path(id): Path<String>,
    Query(q): Query<MetricsQuery>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let session = manager.get(&id)?;
    let wants_sse = q.stream.as_deref() == Some("sse")
        || headers
            .get(header::ACCEPT)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.contains("text/event-stream"));
    if wants_sse {
        return Ok(Sse::new(metric_events(session, q.since))
            .keep_alive(KeepAlive::default())
            .into_response());
    }
    let mut rx = session.subscribe();
    let mut snap = rx.borrow_and_update().clone();
    let mut rows = rows_after(&snap.state, q.since);
    if rows.is_empty() && !snap.state.phase.is_terminal() {
        if let Some(wait) = q.wait.filter(|w| *w > 0.0) {
            let deadline = tokio::time::Instant::now() + Duration::from_secs_f64(wait.min(300.0));
            while rows.is_empty() && !snap.state.phase.is_terminal() {
                match tokio::time::timeout_at(deadline, rx.changed()).await {
                    Ok(Ok(())) => {
                        snap = rx.borrow_and_update().clone();
                        rows = rows_after(&snap.state, q.since);
                    }
                    _ => break,
                }
            }
        }
    }
    let next = rows.last().map_or(q.since, |r| r.iter);
    Ok(Json(json!({
        "rows": rows,
        "next": next,
        "status": snap.status(),
        "phase": snap.state.phase,
    }))
    .into_response())
}

/// `metric` events with id = iter, then `end` once the run is finished and
/// the worker has let go.
fn metric_events(session: Arc<Session>, since: usize) -> impl Stream<Item = Result<Event, Infallible>> {
    let rx = session.subscribe();
    stream::unfold(Some((rx, since)), |cursor| async move {
        let (mut rx, since) = cursor?;
        loop {
            let snap = rx.borrow_and_update().clone();
            let rows = rows_after(&snap.state, since);
            if let Some(last) = rows.last() {
                let next = last.iter;
                let events: Vec<Result<Event, Infallible>> = rows
                    .iter()
                    .map(|r| {
                        Ok(Event::default()
                            .event("metric")
                            .id(r.iter.to_string())
                            .json_data(r)
                            .expect("row serializes"))
                    })
                    .collect();
                return Some((stream::iter(events), Some((rx, next))));
            }
            if snap.state.phase.is_terminal() && !snap.running {
                let end = Event::default()
                    .event("end")
                    .json_data(json!({ "status": snap.status(), "phase": snap.state.phase }))
                    .expect("plain JSON");
                return Some((stream::iter(vec![Ok(end)]), None));
            }
            if rx.changed().await.is_err() {
                return None;
            }
        }
    })
    .flatten()
}

async fn transcript(State(manager): State<Arc<SessionManager>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = manager.get(&id)?;
    let snap = session.snapshot();
    Ok(Json(json!({ "messages": snap.state.messages })))
}

async fn report(State(manager): State<Arc<SessionManager>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let session = manager.get(&id)?;
    let snap = session.snapshot();
    let state = &snap.state;
    match snap.status() {
        RunStatus::Done | RunStatus::Failed => {}
        other => return Err(SessionError::NotFinished(other).into()),
    }
    let mut body = report_json(state);
    body["report_markdown"] = json!(report_markdown(state));
    if let Some(s) = &state.summary {
        body["series"] = serde_json::to_value(&s.series).expect("series serialize");
    }
    body["metrics"] = serde_json::to_value(metric_rows(state)).expect("rows serialize");
    Ok(Json(body))
}
