//! Axum routes over [`SessionManager`].

use std::future::Future;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::manager::{BallotRequest, CreateSession, ResponseRequest, SessionManager};

type Shared = State<Arc<SessionManager>>;

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let body = ErrorBody {
            error: self.code(),
            message: self.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

/// Runs a manager call on the blocking pool; decoding and file writes
/// would otherwise stall the async workers.
async fn blocking<T, F>(m: Arc<SessionManager>, f: F) -> Result<Json<T>, ServiceError>
where
    T: Send + 'static,
    F: FnOnce(&SessionManager) -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&m))
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
        .map(Json)
}

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session).get(list_sessions))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/lineup", get(get_lineup))
        .route("/api/sessions/{id}/ballots", post(submit_ballot))
        .route("/api/sessions/{id}/trial", get(next_trial))
        .route("/api/sessions/{id}/responses", post(submit_response))
        .route("/api/sessions/{id}/results", get(get_results))
        .route("/api/sessions/{id}/abort", post(abort_session))
        .route("/images/{file}", get(get_image))
        .with_state(manager)
}

async fn create_session(State(m): Shared, Json(req): Json<CreateSession>) -> Response {
    match blocking(m, move |m| m.create_session(req)).await {
        Ok(body) => (StatusCode::CREATED, body).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn list_sessions(State(m): Shared) -> impl IntoResponse {
    Json(m.list_sessions())
}

async fn get_session(State(m): Shared, Path(id): Path<String>) -> impl IntoResponse {
    m.session(&id).map(Json)
}

async fn get_lineup(State(m): Shared, Path(id): Path<String>) -> impl IntoResponse {
    m.lineup(&id).map(Json)
}

async fn submit_ballot(State(m): Shared, Path(id): Path<String>, Json(req): Json<BallotRequest>) -> impl IntoResponse {
    blocking(m, move |m| m.submit_ballot(&id, req)).await
}

#[derive(Deserialize)]
struct TrialQuery {
    participant: String,
}

async fn next_trial(State(m): Shared, Path(id): Path<String>, Query(q): Query<TrialQuery>) -> impl IntoResponse {
    m.next_trial(&id, &q.participant).map(Json)
}

async fn submit_response(
    State(m): Shared,
    Path(id): Path<String>,
    Json(req): Json<ResponseRequest>,
) -> impl IntoResponse {
    blocking(m, move |m| m.submit_response(&id, req)).await
}

async fn get_results(State(m): Shared, Path(id): Path<String>) -> impl IntoResponse {
    blocking(m, move |m| m.results(&id)).await
}

async fn abort_session(State(m): Shared, Path(id): Path<String>) -> impl IntoResponse {
    blocking(m, move |m| m.abort(&id)).await
}

async fn get_image(State(m): Shared, Path(file): Path<String>) -> Response {
    let Some(hash) = file.strip_suffix(".png") else {
        return ServiceError::NotFound(format!("image {file}")).into_response();
    };
    match m.store().get(hash) {
        Ok(bytes) => (
            [
                (header::CONTENT_TYPE, "image/png"),
                (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
            ],
            bytes,
        )
            .into_response(),
        Err(e) => e.into_response(),
    }
}

/// Serves until `shutdown` resolves, then flushes every session log.
pub async fn serve(
    manager: Arc<SessionManager>,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "listening");
    axum::serve(listener, router(manager.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    let flush = manager.clone();
    tokio::task::spawn_blocking(move || flush.sync_all())
        .await
        .map_err(std::io::Error::other)?
        .map_err(std::io::Error::other)?;
    tracing::info!("session logs flushed");
    Ok(())
}
