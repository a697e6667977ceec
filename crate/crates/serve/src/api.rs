use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::RwLock;
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use cellbloom_core::manifest::FlowerClass;

use crate::error::{ServeError, ServeResult};
use crate::store::TaskStore;

/// Environment variable holding the bearer token for `/api/export`.
pub const EXPORT_TOKEN_ENV: &str = "CELLBLOOM_EXPORT_TOKEN";

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<RwLock<TaskStore>>,
    /// Export is refused outright when unset.
    pub export_token: Option<String>,
}

impl AppState {
    pub fn new(store: TaskStore, export_token: Option<String>) -> Self {
        Self {
            store: Arc::new(RwLock::new(store)),
            export_token,
        }
    }
}

struct ApiError(StatusCode, String);

impl From<ServeError> for ApiError {
    fn from(e: ServeError) -> Self {
        let status = match &e {
            ServeError::UnknownTask(_) => StatusCode::NOT_FOUND,
            ServeError::DuplicateVote { .. } | ServeError::TaskClosed(_) => StatusCode::CONFLICT,
            ServeError::Invalid(_) | ServeError::NoVotes(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %e, "request failed");
            return ApiError(status, "internal error".into());
        }
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

async fn next_task(State(state): State<AppState>, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    let annotator = q.annotator.unwrap_or_default();
    if annotator.trim().is_empty() {
        return Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, "annotator must be non-empty".into()));
    }
    Ok(match state.store.read().next_task(&annotator) {
        Some(view) => Json(view).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn image(State(state): State<AppState>, Path(task_id): Path<u64>) -> Result<Response, ApiError> {
    let path = state.store.read().image_path(task_id).ok_or(ServeError::UnknownTask(task_id))?;
    let bytes = tokio::fs::read(&path).await.map_err(|source| ServeError::Io { path, source })?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Deserialize)]
struct Submission {
    task_id: u64,
    annotator: String,
    flower_class: String,
    #[serde(default)]
    client_timestamp: Option<String>,
}

async fn submit(State(state): State<AppState>, body: Result<Json<Submission>, JsonRejection>) -> Result<Response, ApiError> {
    let Json(s) = body.map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()))?;
    let class: FlowerClass = s
        .flower_class
        .parse()
        .map_err(|_| ApiError(StatusCode::UNPROCESSABLE_ENTITY, format!("unknown flower class `{}`", s.flower_class)))?;
    let store = state.store.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        store.write().submit(s.task_id, &s.annotator, class, s.client_timestamp)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(outcome)).into_response())
}

async fn progress(State(state): State<AppState>) -> Response {
    Json(state.store.read().progress()).into_response()
}

async fn export(State(state): State<AppState>, headers: HeaderMap) -> Result<Response, ApiError> {
    let Some(expected) = state.export_token.as_deref() else {
        return Err(ApiError(StatusCode::FORBIDDEN, format!("export disabled; set {EXPORT_TOKEN_ENV}")));
    };
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given != Some(expected) {
        return Err(ApiError(StatusCode::UNAUTHORIZED, "bad or missing export token".into()));
    }
    let manifest = state.store.read().export()?;
    let body = manifest.to_jsonl().map_err(ServeError::from)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/images/{task_id}", get(image))
        .route("/api/annotations", post(submit))
        .route("/api/progress", get(progress))
        .route("/api/export", get(export))
        .with_state(state)
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub addr: SocketAddr,
    pub data_dir: PathBuf,
    pub export_token: Option<String>,
    /// Directory of static client assets served at `/`.
    pub static_dir: Option<PathBuf>,
}

/// Open the store in `data_dir` and serve until the process is interrupted.
pub async fn serve(cfg: ServeConfig) -> ServeResult<()> {
    let store = TaskStore::open(&cfg.data_dir)?;
    let p = store.progress();
    tracing::info!(open = p.open, complete = p.complete, votes = p.total_votes, "store loaded");
    let mut app = router(AppState::new(store, cfg.export_token));
    if let Some(dir) = cfg.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    let listener = TcpListener::bind(cfg.addr).await.map_err(|source| ServeError::Io {
        path: PathBuf::from(cfg.addr.to_string()),
        source,
    })?;
    tracing::info!(addr = %cfg.addr, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| ServeError::Io {
            path: PathBuf::from(cfg.addr.to_string()),
            source,
        })
}
