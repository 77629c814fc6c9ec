//! HTTP/JSON front end over editing sessions.
//!
//! Every session sits behind its own async mutex, so requests against one
//! session run one at a time in arrival order while different sessions
//! proceed independently. Sessions live in memory and expire after a period
//! of inactivity.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::{Mutex, RwLock};
use tower_http::cors::CorsLayer;
use uuid::Uuid;

use scoretalk_core::ingest::{events_to_value, load_score, save_score, score_to_value, SourceFormat};
use scoretalk_core::model::{flatten, Path, ScoreMeta};
use scoretalk_core::query::{Pattern, Selection};
use scoretalk_core::session::{Outcome, Session, Status};
use scoretalk_core::transforms::OperationDescriptor;

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(60 * 60);

/// One session slot. The score is absent until the first upload.
struct Slot {
    session: Option<Session>,
    last_used: Instant,
}

type SharedSlot = Arc<Mutex<Slot>>;

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<Uuid, SharedSlot>>>,
    idle_timeout: Duration,
}

impl Default for AppState {
    fn default() -> Self {
        Self::new(DEFAULT_IDLE_TIMEOUT)
    }
}

impl AppState {
    pub fn new(idle_timeout: Duration) -> Self {
        AppState {
            sessions: Arc::new(RwLock::new(HashMap::new())),
            idle_timeout,
        }
    }

    pub async fn session_count(&self) -> usize {
        self.sessions.read().await.len()
    }

    /// Drops sessions idle for longer than the timeout; returns how many.
    pub async fn expire_idle(&self) -> usize {
        let mut map = self.sessions.write().await;
        let before = map.len();
        let timeout = self.idle_timeout;
        let mut keep = HashMap::with_capacity(before);
        for (id, slot) in map.drain() {
            // A slot that is locked is in use, hence not idle.
            let idle = match slot.try_lock() {
                Ok(s) => s.last_used.elapsed() > timeout,
                Err(_) => false,
            };
            if !idle {
                keep.insert(id, slot);
            }
        }
        *map = keep;
        before - map.len()
    }

    async fn slot(&self, id: &str) -> Result<SharedSlot, ApiError> {
        let id = Uuid::parse_str(id).map_err(|_| ApiError::not_found())?;
        let slot = self.sessions.read().await.get(&id).cloned().ok_or_else(ApiError::not_found)?;
        Ok(slot)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn not_found() -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown session")
    }

    fn no_score() -> Self {
        Self::new(StatusCode::CONFLICT, "no score loaded")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn snapshot(session: &Session) -> Value {
    let events = flatten(session.music(), session.meta()).unwrap_or_default();
    json!({
        "version": session.version(),
        "score": score_to_value(session.music(), session.meta()),
        "events": events_to_value(&events, session.meta()),
    })
}

fn empty_snapshot() -> Value {
    json!({
        "version": 0,
        "score": Value::Null,
        "meta": scoretalk_core::ingest::meta_to_value(&ScoreMeta::default()),
        "events": [],
    })
}

/// Outcome fields plus the score snapshot the client renders.
fn outcome_body(outcome: &Outcome, session: &Session) -> Value {
    let mut body = serde_json::to_value(outcome).expect("outcomes serialize");
    if let (Value::Object(obj), Value::Object(snap)) = (&mut body, snapshot(session)) {
        for (k, v) in snap {
            if k != "version" {
                obj.insert(k, v);
            }
        }
    }
    body
}

fn outcome_status(outcome: &Outcome) -> StatusCode {
    match outcome.status {
        Status::ClarificationNeeded => StatusCode::CONFLICT,
        _ => StatusCode::OK,
    }
}

async fn create_session(State(state): State<AppState>) -> impl IntoResponse {
    let id = Uuid::new_v4();
    let slot = Slot {
        session: None,
        last_used: Instant::now(),
    };
    state.sessions.write().await.insert(id, Arc::new(Mutex::new(slot)));
    (StatusCode::CREATED, Json(json!({ "sessionId": id.to_string() })))
}

fn upload_format(headers: &HeaderMap) -> ApiResult<SourceFormat> {
    if let Some(v) = headers.get("x-score-format") {
        let s = v.to_str().unwrap_or_default();
        return s
            .parse()
            .map_err(|_| ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, format!("unknown score format {s:?}")));
    }
    let ct = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .split(';')
        .next()
        .unwrap_or_default()
        .trim()
        .to_ascii_lowercase();
    match ct.as_str() {
        "audio/midi" | "audio/x-midi" | "audio/mid" => Ok(SourceFormat::Midi),
        "application/json" => Ok(SourceFormat::Json),
        "application/vnd.recordare.musicxml+xml" | "application/vnd.recordare.musicxml" | "application/xml"
        | "text/xml" => Ok(SourceFormat::MusicXml),
        _ => Err(ApiError::new(
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            "set X-Score-Format to midi, musicxml or json",
        )),
    }
}

async fn upload_score(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let slot = state.slot(&id).await?;
    let format = upload_format(&headers)?;
    let mut slot = slot.lock().await;
    slot.last_used = Instant::now();
    match load_score(&body, format) {
        Ok((music, meta, report)) => {
            let session = Session::new(music, meta);
            let mut out = snapshot(&session);
            out["report"] = serde_json::to_value(&report).expect("reports serialize");
            slot.session = Some(session);
            tracing::info!(%id, %format, events = report.event_count, "score loaded");
            Ok(Json(out))
        }
        Err(e) => Err(ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: json!({
                "error": e.to_string(),
                "report": {"sourceFormat": format, "eventCount": 0, "warnings": [e.to_string()]},
            }),
        }),
    }
}

async fn get_score(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let slot = state.slot(&id).await?;
    let mut slot = slot.lock().await;
    slot.last_used = Instant::now();
    Ok(Json(slot.session.as_ref().map_or_else(empty_snapshot, snapshot)))
}

#[derive(Deserialize)]
struct CommandBody {
    text: String,
}

async fn command(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<CommandBody>,
) -> ApiResult<Response> {
    let slot = state.slot(&id).await?;
    let mut slot = slot.lock().await;
    slot.last_used = Instant::now();
    let session = slot.session.as_mut().ok_or_else(ApiError::no_score)?;
    let outcome = session.apply_command(&body.text);
    Ok((outcome_status(&outcome), Json(outcome_body(&outcome, session))).into_response())
}

#[derive(Deserialize)]
struct ResolveBody {
    index: usize,
}

async fn resolve(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<ResolveBody>,
) -> ApiResult<Response> {
    let slot = state.slot(&id).await?;
    let mut slot = slot.lock().await;
    slot.last_used = Instant::now();
    let session = slot.session.as_mut().ok_or_else(ApiError::no_score)?;
    if !session.has_pending() {
        return Err(ApiError::new(StatusCode::CONFLICT, "nothing to resolve"));
    }
    let in_range = body.index < session.pending_candidates().len();
    let outcome = session.resolve_choice(body.index);
    let status = if in_range { StatusCode::OK } else { StatusCode::BAD_REQUEST };
    Ok((status, Json(outcome_body(&outcome, session))).into_response())
}

async fn undo(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let slot = state.slot(&id).await?;
    let mut slot = slot.lock().await;
    slot.last_used = Instant::now();
    let session = slot.session.as_mut().ok_or_else(ApiError::no_score)?;
    let outcome = session.apply_command("undo");
    Ok(Json(outcome_body(&outcome, session)))
}

async fn history(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let slot = state.slot(&id).await?;
    let mut slot = slot.lock().await;
    slot.last_used = Instant::now();
    let entries = slot
        .session
        .as_ref()
        .map(|s| serde_json::to_value(s.history()).expect("history serializes"))
        .unwrap_or_else(|| json!([]));
    Ok(Json(json!({ "history": entries })))
}

#[derive(Deserialize)]
struct ExportQuery {
    format: Option<String>,
}

async fn export(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    let slot = state.slot(&id).await?;
    let mut slot = slot.lock().await;
    slot.last_used = Instant::now();
    let session = slot.session.as_ref().ok_or_else(ApiError::no_score)?;
    let (format, mime, ext) = match q.format.as_deref().unwrap_or("json") {
        "json" => (SourceFormat::Json, "application/json", "json"),
        "midi" | "mid" => (SourceFormat::Midi, "audio/midi", "mid"),
        other => return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("unknown export format {other:?}"))),
    };
    let bytes = save_score(session.music(), session.meta(), format)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let disposition = HeaderValue::from_str(&format!("attachment; filename=\"score.{ext}\"")).expect("ascii header");
    Ok(([(header::CONTENT_TYPE, HeaderValue::from_static(mime)), (header::CONTENT_DISPOSITION, disposition)], bytes)
        .into_response())
}

#[derive(Deserialize)]
struct SelectBody {
    pattern: Value,
}

async fn select(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<SelectBody>,
) -> ApiResult<Json<Value>> {
    let pattern = Pattern::from_json(&body.pattern).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let slot = state.slot(&id).await?;
    let mut slot = slot.lock().await;
    slot.last_used = Instant::now();
    let session = slot.session.as_ref().ok_or_else(ApiError::no_score)?;
    let sel = session.select(&pattern);
    Ok(Json(json!({
        "pattern": pattern.to_string(),
        "selection": sel,
    })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectionBody {
    version: u64,
    hits: Vec<Vec<usize>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ApplyBody {
    operation: OperationDescriptor,
    #[serde(default)]
    pattern: Option<Value>,
    #[serde(default)]
    selection: Option<SelectionBody>,
}

/// Applies an operation either to a fresh pattern match or to a selection
/// returned earlier by `/select` (rejected if the score changed since).
async fn apply(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<ApplyBody>,
) -> ApiResult<Response> {
    let unprocessable = |m: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, m);
    body.operation.validate().map_err(|e| unprocessable(e.to_string()))?;
    let pattern = match &body.pattern {
        Some(p) => Some(Pattern::from_json(p).map_err(|e| unprocessable(e.to_string()))?),
        None => None,
    };
    let slot = state.slot(&id).await?;
    let mut slot = slot.lock().await;
    slot.last_used = Instant::now();
    let session = slot.session.as_mut().ok_or_else(ApiError::no_score)?;
    let sel = match (pattern, body.selection) {
        (Some(p), None) => session.select(&p),
        (None, Some(s)) => Selection::from_paths(s.version, s.hits.into_iter().map(Path).collect()),
        _ => return Err(unprocessable("give exactly one of pattern or selection".into())),
    };
    let outcome = session.apply_selection(&body.operation, &sel);
    let status = match outcome.status {
        Status::ClarificationNeeded => StatusCode::CONFLICT,
        Status::Error if outcome.message == "stale selection" => StatusCode::CONFLICT,
        _ => StatusCode::OK,
    };
    let mut out = outcome_body(&outcome, session);
    out["echo"] = json!(body.operation.render(&format!("select({}, m)", sel_label(&body.pattern))));
    Ok((status, Json(out)).into_response())
}

fn sel_label(pattern: &Option<Value>) -> String {
    pattern
        .as_ref()
        .and_then(|p| Pattern::from_json(p).ok())
        .map_or_else(|| "selection".to_string(), |p| p.to_string())
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/score", post(upload_score).get(get_score))
        .route("/sessions/{id}/command", post(command))
        .route("/sessions/{id}/resolve", post(resolve))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/history", get(history))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/select", post(select))
        .route("/sessions/{id}/apply", post(apply))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until the listener fails, sweeping idle sessions once a minute.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let n = sweeper.expire_idle().await;
            if n > 0 {
                tracing::info!(expired = n, "idle sessions dropped");
            }
        }
    });
    axum::serve(listener, router(state)).await
}
