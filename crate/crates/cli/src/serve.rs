//! HTTP front end for an [`AnnotationStore`].

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gnome_core::humaneval::{AnnotationStore, HumanEvalError, PairView, RatingSubmission};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

type Shared = Arc<AnnotationStore>;

#[derive(Debug, Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

/// Body of `GET /api/pairs/next`; `pair` is absent once everything is rated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextPair {
    pub done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<PairView>,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<HumanEvalError> for ApiError {
    fn from(e: HumanEvalError) -> Self {
        let status = match &e {
            HumanEvalError::OutOfRange { .. } | HumanEvalError::EmptyField(_) => StatusCode::UNPROCESSABLE_ENTITY,
            HumanEvalError::UnknownPair(_) => StatusCode::NOT_FOUND,
            HumanEvalError::NoRatings | HumanEvalError::InsufficientData => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

async fn next_pair(State(store): State<Shared>, Query(q): Query<NextQuery>) -> Result<Json<NextPair>, ApiError> {
    let annotator = q.annotator.filter(|a| !a.trim().is_empty());
    let annotator = annotator.ok_or_else(|| ApiError(StatusCode::BAD_REQUEST, "annotator query parameter is required".into()))?;
    let pair = store.next_for(&annotator);
    Ok(Json(NextPair { done: pair.is_none(), pair }))
}

async fn submit(State(store): State<Shared>, Json(s): Json<RatingSubmission>) -> Result<Response, ApiError> {
    let record = tokio::task::spawn_blocking(move || store.submit(s))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn stats(State(store): State<Shared>) -> Result<Response, ApiError> {
    Ok(Json(store.stats()?).into_response())
}

async fn export(State(store): State<Shared>) -> Response {
    ([(header::CONTENT_TYPE, "application/x-ndjson")], store.export()).into_response()
}

/// The API routes, plus static files from `ui_dir` for every other path.
pub fn router(store: Shared, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/pairs/next", get(next_pair))
        .route("/api/ratings", post(submit))
        .route("/api/stats", get(stats))
        .route("/api/export", get(export))
        .with_state(store);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until Ctrl-C.
pub async fn serve(store: Shared, ui_dir: Option<PathBuf>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store, ui_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
