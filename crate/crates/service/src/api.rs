//! JSON API over persisted sessions.
//!
//! | route | success |
//! |---|---|
//! | `POST /api/session` `{seed?}` | `201 {session_id, phase, total_phase1, total_phase2}` |
//! | `GET /api/session/{id}/next` | `200 {loop_id, audio_url, phase, index}`, `423` while building Phase II |
//! | `GET /api/session/{id}/audio/{loop_id}` | `200 audio/wav` |
//! | `POST /api/session/{id}/rating` `{loop_id, rating}` | `200 {phase, remaining}` |
//! | `GET /api/session/{id}/results` | `200 {theta_init, theta_final, delta_theta}` |
//!
//! Errors are `{error, detail}`. Each session sits behind its own async
//! mutex; training and Phase II generation run on the blocking pool, the
//! latter without holding the session lock.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use drumcritic::session::{Phase, Session, SessionPhase, PHASE1_RATINGS, PHASE2_RATINGS};
use drumcritic::{encode_wav, Error as CoreError, Label, SampleLibrary};
use serde_json::{json, Value};
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

use crate::config::ServiceConfig;

pub struct SessionSlot {
    pub session: Session,
    dir: PathBuf,
    building: bool,
}

type Shared = Arc<Mutex<SessionSlot>>;

pub struct AppState {
    config: ServiceConfig,
    library: Arc<SampleLibrary>,
    sessions: Mutex<HashMap<String, Shared>>,
}

impl AppState {
    pub fn new(config: ServiceConfig, library: Arc<SampleLibrary>) -> Arc<Self> {
        Arc::new(Self {
            config,
            library,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.config.data_dir.join(id)
    }

    /// In-memory session, or one resumed from disk after a restart.
    pub async fn session(self: &Arc<Self>, id: &str) -> Result<Shared, ApiError> {
        let valid = !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
        if !valid {
            return Err(ApiError::not_found(format!("no session {id}")));
        }
        let mut map = self.sessions.lock().await;
        if let Some(s) = map.get(id) {
            return Ok(s.clone());
        }
        let dir = self.session_dir(id);
        if !dir.join("session.json").exists() {
            return Err(ApiError::not_found(format!("no session {id}")));
        }
        let library = self.library.clone();
        let load_dir = dir.clone();
        let session = tokio::task::spawn_blocking(move || Session::load(load_dir, library))
            .await
            .map_err(ApiError::internal)??;
        let building = session.phase() == SessionPhase::BuildingPhase2;
        let shared = Arc::new(Mutex::new(SessionSlot {
            session,
            dir,
            building: false,
        }));
        map.insert(id.to_string(), shared.clone());
        drop(map);
        if building {
            spawn_phase2(shared.clone()).await;
        }
        Ok(shared)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    error: &'static str,
    detail: String,
    extra: Option<(&'static str, &'static str)>,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, detail: impl Into<String>) -> Self {
        Self {
            status,
            error,
            detail: detail.into(),
            extra: None,
        }
    }

    fn not_found(detail: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", detail)
    }

    fn bad_field(field: &str, reason: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", format!("{field}: {reason}"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let detail = e.to_string();
        match e {
            CoreError::Generating => Self {
                extra: Some(("status", "generating")),
                ..Self::new(StatusCode::LOCKED, "generating", detail)
            },
            CoreError::Completed => Self::new(StatusCode::CONFLICT, "completed", detail),
            CoreError::Sequencing(_) => Self::new(StatusCode::CONFLICT, "conflict", detail),
            CoreError::State(_) => Self::new(StatusCode::CONFLICT, "conflict", detail),
            CoreError::Parse { field, reason } => Self::bad_field(&field, reason),
            _ => Self::internal(detail),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(detail = %self.detail, "request failed");
        }
        let mut body = json!({ "error": self.error, "detail": self.detail });
        if let Some((k, v)) = self.extra {
            body[k] = v.into();
        }
        (self.status, Json(body)).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/api/session", post(create_session))
        .route("/api/session/{id}/next", get(next_loop))
        .route("/api/session/{id}/audio/{loop_id}", get(audio))
        .route("/api/session/{id}/rating", post(submit_rating))
        .route("/api/session/{id}/results", get(results));
    let api = match &state.config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    api.with_state(state)
}

fn parse_body(body: &Bytes) -> Result<serde_json::Map<String, Value>, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(Default::default());
    }
    match serde_json::from_slice(body) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(ApiError::bad_field("body", "expected a JSON object")),
        Err(e) => Err(ApiError::bad_field("body", e)),
    }
}

pub fn phase_name(phase: SessionPhase) -> &'static str {
    match phase {
        SessionPhase::PhaseOne => "I",
        SessionPhase::BuildingPhase2 | SessionPhase::PhaseTwo => "II",
        SessionPhase::Complete => "complete",
    }
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let body = parse_body(&body)?;
    let seed = match body.get("seed") {
        None | Some(Value::Null) => state.config.seed.unwrap_or_else(rand::random),
        Some(v) => v.as_u64().ok_or_else(|| ApiError::bad_field("seed", "expected a non-negative integer"))?,
    };
    let id = uuid::Uuid::new_v4().simple().to_string();
    let dir = state.session_dir(&id);
    let (config, library, sid) = (state.config.session.clone(), state.library.clone(), id.clone());
    let slot = tokio::task::spawn_blocking(move || -> Result<SessionSlot, ApiError> {
        let session = Session::create(sid, config, library, seed)?;
        let slot = SessionSlot {
            session,
            dir,
            building: false,
        };
        slot.session.persist(&slot.dir)?;
        Ok(slot)
    })
    .await
    .map_err(ApiError::internal)??;
    state.sessions.lock().await.insert(id.clone(), Arc::new(Mutex::new(slot)));
    tracing::info!(session = %id, seed, "session created");
    let body = json!({
        "session_id": id,
        "phase": "I",
        "total_phase1": PHASE1_RATINGS,
        "total_phase2": PHASE2_RATINGS,
    });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn next_loop(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let shared = state.session(&id).await?;
    let mut guard = shared.lock_owned().await;
    // Phase I proposals score dozens of loops; keep them off the runtime
    let next = tokio::task::spawn_blocking(move || {
        let was_pending = guard.session.pending().is_some();
        let next = guard.session.next_loop()?;
        if !was_pending {
            guard.session.persist(&guard.dir)?;
        }
        Ok::<_, CoreError>(next)
    })
    .await
    .map_err(ApiError::internal)??;
    let phase = match next.phase {
        Phase::One => "I",
        Phase::Two => "II",
    };
    Ok(Json(json!({
        "loop_id": next.loop_id.as_str(),
        "audio_url": format!("/api/session/{id}/audio/{}", next.loop_id),
        "phase": phase,
        "index": next.index,
    }))
    .into_response())
}

async fn audio(
    State(state): State<Arc<AppState>>,
    Path((id, loop_id)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let shared = state.session(&id).await?;
    let guard = shared.lock().await;
    let wave = guard
        .session
        .presentation_audio(&loop_id)
        .map_err(|_| ApiError::not_found(format!("loop {loop_id} was not presented in session {id}")))?;
    drop(guard);
    Ok(([(header::CONTENT_TYPE, "audio/wav")], encode_wav(&wave)).into_response())
}

async fn submit_rating(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let body = parse_body(&body)?;
    let loop_id = match body.get("loop_id") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(_) => return Err(ApiError::bad_field("loop_id", "expected a non-empty string")),
        None => return Err(ApiError::bad_field("loop_id", "missing")),
    };
    let rating = match body.get("rating").map(|v| v.as_str()) {
        Some(Some("like")) => Label::Like,
        Some(Some("dislike")) => Label::Dislike,
        Some(_) => return Err(ApiError::bad_field("rating", "expected \"like\" or \"dislike\"")),
        None => return Err(ApiError::bad_field("rating", "missing")),
    };
    let shared = state.session(&id).await?;
    let guard = shared.clone().lock_owned().await;
    if guard.session.phase() == SessionPhase::BuildingPhase2 {
        return Err(CoreError::Generating.into());
    }
    let (mut guard, outcome) = tokio::task::spawn_blocking(move || {
        let mut guard = guard;
        let out = guard
            .session
            .record_rating(&loop_id, rating)
            .and_then(|out| guard.session.persist(&guard.dir).map(|_| out));
        (guard, out)
    })
    .await
    .map_err(ApiError::internal)?;
    let outcome = outcome?;
    if outcome.phase == SessionPhase::BuildingPhase2 && !guard.building {
        guard.building = true;
        drop(guard);
        spawn_phase2(shared).await;
    }
    Ok(Json(json!({ "phase": phase_name(outcome.phase), "remaining": outcome.remaining })).into_response())
}

/// Generate the Phase II queue in the background and install it.
async fn spawn_phase2(shared: Shared) {
    let job = {
        let mut slot = shared.lock().await;
        slot.building = true;
        match slot.session.phase2_job() {
            Ok(job) => job,
            Err(e) => {
                tracing::error!(error = %e, "cannot start phase II generation");
                return;
            }
        }
    };
    tokio::spawn(async move {
        let id = shared.lock().await.session.id().to_string();
        tracing::info!(session = %id, "generating phase II loops");
        let slots = tokio::task::spawn_blocking(move || job.run()).await;
        let mut slot = shared.lock().await;
        slot.building = false;
        let installed = match slots {
            Ok(Ok(slots)) => slot.session.install_phase2_queue(slots),
            Ok(Err(e)) => Err(e),
            Err(e) => Err(CoreError::State(e.to_string())),
        };
        match installed.and_then(|_| slot.session.persist(&slot.dir)) {
            Ok(()) => tracing::info!(session = %id, "phase II ready"),
            Err(e) => tracing::error!(session = %id, error = %e, "phase II generation failed"),
        }
    });
}

async fn results(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let shared = state.session(&id).await?;
    let r = shared.lock().await.session.compute_results()?;
    Ok(Json(json!({
        "theta_init": r.theta_init,
        "theta_final": r.theta_final,
        "delta_theta": r.delta_theta,
    }))
    .into_response())
}

/// Bind and serve until ctrl-c.
pub async fn serve(config: ServiceConfig, library: Arc<SampleLibrary>) -> std::io::Result<()> {
    std::fs::create_dir_all(&config.data_dir)?;
    let addr = format!("{}:{}", config.host, config.port);
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    tracing::info!(%addr, samples = library.len(), "listening");
    let app = router(AppState::new(config, library));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
