//! JSON routes and the server-sent log stream.

use std::convert::Infallible;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cube_core::monitor::{live_colors, multiplex_logs, poll_snapshot, MonitorError, MuxItem};
use cube_core::orchestrator::{Controller, LifecycleError, SessionState, StartPolicy};
use cube_core::report::ValidationReport;
use cube_core::settings::SettingsMap;
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::service::{LabService, Outcome};

/// Error body returned by every route.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    pub http_status: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub findings: Option<ValidationReport>,
}

/// Every code an [`ApiError`] can carry.
pub const ERROR_CODES: [&str; 11] = [
    "BAD_REQUEST",
    "UNKNOWN_STACK",
    "UNKNOWN_SERVICE",
    "UNKNOWN_SESSION",
    "NOT_FOUND",
    "STACK_ALREADY_ACTIVE",
    "NO_ACTIVE_SESSION",
    "VALIDATION_FAILED",
    "SETTINGS_LOCKED",
    "ENGINE_FAILURE",
    "INTERNAL",
];

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        let http_status = match code {
            "BAD_REQUEST" => 400,
            "UNKNOWN_STACK" | "UNKNOWN_SERVICE" | "UNKNOWN_SESSION" | "NOT_FOUND" => 404,
            "STACK_ALREADY_ACTIVE" | "NO_ACTIVE_SESSION" => 409,
            "VALIDATION_FAILED" => 422,
            "SETTINGS_LOCKED" => 423,
            "ENGINE_FAILURE" => 502,
            _ => 500,
        };
        Self {
            code: code.to_string(),
            message: message.into(),
            http_status,
            findings: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new("BAD_REQUEST", message)
    }
}

impl From<LifecycleError> for ApiError {
    fn from(e: LifecycleError) -> Self {
        let mut err = ApiError::new(e.code(), e.to_string());
        if let LifecycleError::ValidationFailed(report) = e {
            err.message = format!("{} finding(s)", report.len());
            err.findings = Some(report);
        }
        err
    }
}

impl From<MonitorError> for ApiError {
    fn from(e: MonitorError) -> Self {
        match e {
            MonitorError::NotFound(_) => ApiError::new("UNKNOWN_SERVICE", e.to_string()),
            MonitorError::Engine { .. } => ApiError::new("ENGINE_FAILURE", e.to_string()),
        }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs blocking catalog and engine work off the async workers.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new("INTERNAL", e.to_string()))?
}

/// Parses an optional JSON body; an empty body yields the default.
fn body<T: Default + for<'de> Deserialize<'de>>(bytes: &[u8]) -> ApiResult<T> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

pub fn router(service: LabService) -> Router {
    Router::new()
        .route("/api/stacks", get(list_stacks))
        .route("/api/stacks/{name}", get(get_stack))
        .route("/api/stacks/{name}/start", post(start_stack))
        .route("/api/stacks/{name}/stop", post(stop_stack))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/status", get(status))
        .route("/api/logs", get(logs))
        .route("/api/settings", get(get_settings).put(put_settings))
        .fallback(|| async { ApiError::new("NOT_FOUND", "no such route") })
        .with_state(service)
}

async fn list_stacks(State(svc): State<LabService>) -> ApiResult<Json<Value>> {
    let p = svc.published();
    let engine = svc.engine();
    blocking(move || {
        let (catalog, findings) = Controller::new(p.lab, engine).catalog()?;
        Ok(Json(json!({ "stacks": catalog.summaries(), "findings": findings })))
    })
    .await
}

async fn get_stack(State(svc): State<LabService>, Path(name): Path<String>) -> ApiResult<Json<Value>> {
    let p = svc.published();
    let engine = svc.engine();
    blocking(move || {
        let (manifest, findings) = Controller::new(p.lab, engine).inspect(&name)?;
        Ok(Json(json!({ "manifest": manifest, "valid": findings.is_empty(), "findings": findings })))
    })
    .await
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
enum PolicyArg {
    #[default]
    #[serde(alias = "REJECT_IF_ACTIVE", alias = "reject")]
    #[serde(rename = "REJECT")]
    Reject,
    #[serde(alias = "REPLACE_ACTIVE", alias = "replace")]
    #[serde(rename = "REPLACE")]
    Replace,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct StartBody {
    policy: PolicyArg,
    emulated: bool,
    wait: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct WaitQuery {
    wait: bool,
}

async fn start_stack(State(svc): State<LabService>, Path(name): Path<String>, raw: Bytes) -> ApiResult<Response> {
    let req: StartBody = body(&raw)?;
    let policy = match req.policy {
        PolicyArg::Reject => StartPolicy::RejectIfActive,
        PolicyArg::Replace => StartPolicy::ReplaceActive,
    };
    Ok(match svc.start(&name, policy, req.emulated, req.wait).await? {
        Outcome::Accepted(id) => (
            StatusCode::ACCEPTED,
            Json(json!({ "session": id, "stack": name, "state": SessionState::Starting })),
        )
            .into_response(),
        Outcome::Finished(session) => Json(session).into_response(),
    })
}

async fn stop_stack(
    State(svc): State<LabService>,
    Path(name): Path<String>,
    query: Result<Query<WaitQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query?;
    Ok(match svc.stop(Some(&name), q.wait).await? {
        Outcome::Accepted(id) => (
            StatusCode::ACCEPTED,
            Json(json!({ "session": id, "stack": name, "state": SessionState::Stopping })),
        )
            .into_response(),
        Outcome::Finished(report) => Json(report).into_response(),
    })
}

async fn get_session(State(svc): State<LabService>, Path(id): Path<String>) -> ApiResult<Response> {
    let p = svc.published();
    match p.session(&id) {
        Some(s) => Ok(Json(s).into_response()),
        None => Err(LifecycleError::UnknownSession(id).into()),
    }
}

async fn status(State(svc): State<LabService>) -> ApiResult<Response> {
    let p = svc.published();
    let engine = svc.engine();
    blocking(move || {
        let session = p.current.as_ref().or(p.sessions.last());
        Ok(Json(poll_snapshot(session, engine.as_ref(), &p.lab.hosts)).into_response())
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct LogsQuery {
    /// Comma-separated service names; empty means all.
    service: String,
    follow: bool,
}

fn sse_event(item: &MuxItem) -> Event {
    let name = match item {
        MuxItem::Log { .. } => "log",
        MuxItem::Gap { .. } => "gap",
        MuxItem::End { .. } => "end",
    };
    let mut data = serde_json::to_value(item).unwrap_or(Value::Null);
    if let Some(obj) = data.as_object_mut() {
        obj.remove("kind");
    }
    Event::default().event(name).data(data.to_string())
}

async fn logs(
    State(svc): State<LabService>,
    query: Result<Query<LogsQuery>, QueryRejection>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let Query(q) = query?;
    let filter: Vec<String> = q
        .service
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    let p = svc.published();
    let session = p.current.clone().ok_or(LifecycleError::NoActiveSession)?;
    let engine = svc.engine();
    let follow = q.follow;
    let mux = blocking(move || {
        let colors = live_colors(&session, engine.clone(), &p.lab.hosts);
        Ok(multiplex_logs(&session, engine, &p.lab.hosts, &filter, follow, colors)?)
    })
    .await?;
    let (tx, rx) = tokio::sync::mpsc::channel::<MuxItem>(64);
    tokio::task::spawn_blocking(move || {
        for item in mux {
            if tx.blocking_send(item).is_err() {
                break;
            }
        }
    });
    let events = stream::unfold(rx, |mut rx| async move { rx.recv().await.map(|item| (item, rx)) })
        .map(|item| Ok(sse_event(&item)));
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SettingsBody {
    pub settings: SettingsMap,
    #[serde(default)]
    pub locked: bool,
}

async fn get_settings(State(svc): State<LabService>) -> Json<SettingsBody> {
    let p = svc.published();
    Json(SettingsBody {
        locked: p.locked(),
        settings: p.lab.global,
    })
}

async fn put_settings(State(svc): State<LabService>, raw: Bytes) -> ApiResult<Json<SettingsBody>> {
    let req: SettingsBody = serde_json::from_slice(&raw)
        .map_err(|e| ApiError::bad_request(format!("invalid settings body: {e}")))?;
    let settings = svc.put_settings(req.settings).await?;
    Ok(Json(SettingsBody { settings, locked: false }))
}
