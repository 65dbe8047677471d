//! HTTP service for live duel sessions.
//!
//! Each session is backed by an append-only JSONL event log under
//! `<data-dir>/sessions/`. On startup every log found there is replayed,
//! so a restarted service resumes each session at the same pending duel.
//! Operations on one session are serialized; different sessions proceed
//! in parallel.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hilo_core::experiment::Condition;
use hilo_core::session::{brightness_scale, session_id, DuelPayload, EventLog, Phase, Session, SessionContext, Side};
use hilo_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;
use tower_http::trace::TraceLayer;

type SessionHandle = Arc<Mutex<Session>>;

pub struct AppState {
    ctx: Arc<SessionContext>,
    session_dir: Option<PathBuf>,
    sessions: Mutex<HashMap<String, SessionHandle>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl AppState {
    /// Sessions live in memory only.
    pub fn in_memory(ctx: Arc<SessionContext>) -> Self {
        Self {
            ctx,
            session_dir: None,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    /// Persists sessions under `data_dir` and recovers any found there.
    pub fn persistent(ctx: Arc<SessionContext>, data_dir: &Path) -> hilo_core::Result<Self> {
        let dir = data_dir.join("sessions");
        std::fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            match Session::open(ctx.clone(), &path) {
                Ok(s) => {
                    tracing::info!(id = s.id(), phase = ?s.phase(), "recovered session");
                    sessions.insert(s.id().to_string(), Arc::new(Mutex::new(s)));
                }
                Err(e) => tracing::error!(path = %path.display(), error = %e, "skipping unreadable session log"),
            }
        }
        Ok(Self {
            ctx,
            session_dir: Some(dir),
            sessions: Mutex::new(sessions),
        })
    }

    pub fn session_count(&self) -> usize {
        lock(&self.sessions).len()
    }

    fn get(&self, id: &str) -> Result<SessionHandle, ApiError> {
        lock(&self.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(id.to_string()))
    }

    /// Returns the session for `(condition, seed)`, creating it if needed.
    fn create(&self, condition: Condition, seed: u64) -> Result<(String, bool), ApiError> {
        let id = session_id(&condition, seed);
        let mut sessions = lock(&self.sessions);
        if sessions.contains_key(&id) {
            return Ok((id, false));
        }
        let log = match &self.session_dir {
            Some(dir) => EventLog::create(&dir.join(format!("{id}.jsonl")))?,
            None => EventLog::memory(),
        };
        let session = Session::create(self.ctx.clone(), condition, seed, log)?;
        tracing::info!(%id, seed, "created session");
        sessions.insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok((id, true))
    }
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Core(Error),
    /// A stale or duplicate choice; carries the duel still pending.
    Stale { error: Error, current: Option<Box<DuelPayload>> },
    Internal(String),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::Core(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::NotFound(id) => (
                StatusCode::NOT_FOUND,
                json!({"kind": "not_found", "error": format!("no session {id:?}")}),
            ),
            ApiError::Stale { error, current } => (
                StatusCode::CONFLICT,
                json!({"kind": "stale_trial", "error": error.to_string(), "current_duel": current}),
            ),
            ApiError::Core(e) => {
                let (status, kind) = match &e {
                    Error::UnknownCondition(_) | Error::InvalidParam(_) => (StatusCode::BAD_REQUEST, "invalid_request"),
                    Error::SessionComplete => (StatusCode::CONFLICT, "session_complete"),
                    Error::SessionIncomplete => (StatusCode::CONFLICT, "session_incomplete"),
                    Error::StaleTrial { .. } => (StatusCode::CONFLICT, "stale_trial"),
                    _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
                };
                if status.is_server_error() {
                    tracing::error!(error = %e, "request failed");
                }
                (status, json!({"kind": kind, "error": e.to_string()}))
            }
            ApiError::Internal(msg) => {
                tracing::error!(error = %msg, "request failed");
                (StatusCode::INTERNAL_SERVER_ERROR, json!({"kind": "internal", "error": msg}))
            }
        };
        (status, Json(body)).into_response()
    }
}

/// Runs blocking session work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateSession {
    pub condition: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub seed: u64,
    pub created: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Choice {
    pub trial: usize,
    pub side: Side,
    #[serde(default)]
    pub phase: Option<Phase>,
}

async fn create_session(State(state): State<Arc<AppState>>, Json(req): Json<CreateSession>) -> Result<Response, ApiError> {
    let condition: Condition = req.condition.parse()?;
    let seed = req.seed.unwrap_or_else(rand::random);
    let (id, created) = blocking(move || state.create(condition, seed)).await?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(Created { id, seed, created })).into_response())
}

async fn current_duel(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let handle = state.get(&id)?;
    let payload = blocking(move || Ok(lock(&handle).current_duel()?)).await?;
    Ok(Json(payload).into_response())
}

async fn post_choice(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(choice): Json<Choice>,
) -> Result<Response, ApiError> {
    let handle = state.get(&id)?;
    let ack = blocking(move || {
        let mut session = lock(&handle);
        match session.post_choice(choice.trial, choice.side, choice.phase) {
            Ok(ack) => Ok(ack),
            Err(error @ Error::StaleTrial { .. }) => Err(ApiError::Stale {
                error,
                current: session.current_duel().ok().map(Box::new),
            }),
            Err(e) => Err(e.into()),
        }
    })
    .await?;
    Ok(Json(ack).into_response())
}

async fn status(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let handle = state.get(&id)?;
    let status = blocking(move || Ok(lock(&handle).status())).await?;
    Ok(Json(status).into_response())
}

async fn results(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let handle = state.get(&id)?;
    let results = blocking(move || Ok(lock(&handle).results()?)).await?;
    Ok(Json(results).into_response())
}

async fn scale(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let cap = state.ctx.display_cap;
    let examples = blocking(move || Ok(brightness_scale(cap)?)).await?;
    Ok(Json(examples).into_response())
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/brightness-scale", get(scale))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/duel", get(current_duel))
        .route("/sessions/{id}/choice", post(post_choice))
        .route("/sessions/{id}/status", get(status))
        .route("/sessions/{id}/results", get(results))
        .layer(CorsLayer::permissive())
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, sessions = state.session_count(), "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
