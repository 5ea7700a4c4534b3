//! HTTP JSON API.
//!
//! | route                         | body / query                          |
//! |-------------------------------|---------------------------------------|
//! | `POST /runs`                  | `{question, mode?, config?}` → 201 record |
//! | `GET /runs`                   | `{schema_version, runs}`              |
//! | `GET /runs/{id}`              | record                                |
//! | `GET /runs/{id}/events`       | `?from_seq=` (or `Last-Event-ID`), SSE |
//! | `POST /runs/{id}/steer`       | `{channel_id?, action, message?}`     |
//! | `GET /runs/{id}/graph`        | graph export                          |
//! | `GET /runs/{id}/trace`        | uncertainty trace                     |
//! | `GET /runs/{id}/features`     | trace features and regime             |
//!
//! Errors are `{schema_version, error, message, fields?}` with the status
//! codes in [`status_of`].

use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clio_core::SCHEMA_VERSION;
use futures::Stream;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;

use crate::service::{CreateRun, Service, SteeringCommand, View};
use crate::ServiceError;

pub fn status_of(e: &ServiceError) -> StatusCode {
    match e {
        ServiceError::UnknownRun(_) | ServiceError::UnknownChannel(_) => StatusCode::NOT_FOUND,
        ServiceError::IllegalState(_) | ServiceError::ViewUnavailable(_) => StatusCode::CONFLICT,
        ServiceError::InvalidConfig(_) | ServiceError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
        ServiceError::Backend(_) => StatusCode::SERVICE_UNAVAILABLE,
        ServiceError::Store(_) | ServiceError::Run(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let mut body = json!({
            "schema_version": SCHEMA_VERSION,
            "error": self.code(),
            "message": self.to_string(),
        });
        if let ServiceError::InvalidConfig(c) = &self {
            body["fields"] = json!(c.0);
        }
        (status_of(&self), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ServiceError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::InvalidRequest(e.to_string()))
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/events", get(stream_events))
        .route("/runs/{id}/steer", post(steer))
        .route("/runs/{id}/graph", get(|s, p| snapshot(s, p, View::Graph)))
        .route("/runs/{id}/trace", get(|s, p| snapshot(s, p, View::Trace)))
        .route("/runs/{id}/features", get(|s, p| snapshot(s, p, View::Features)))
        .with_state(service)
}

/// The API plus static dashboard assets served from `ui_dir`, if given.
pub fn router_with_ui(service: Arc<Service>, ui_dir: Option<PathBuf>) -> Router {
    let api = router(service);
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(service: Arc<Service>, addr: SocketAddr, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "steering service listening");
    axum::serve(listener, router_with_ui(service, ui_dir)).await
}

async fn create_run(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateRun = parse(&body)?;
    let record = tokio::task::spawn_blocking(move || svc.create_run(req))
        .await
        .map_err(|e| ServiceError::IllegalState(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(record)))
}

async fn list_runs(State(svc): State<Arc<Service>>) -> impl IntoResponse {
    Json(json!({"schema_version": SCHEMA_VERSION, "runs": svc.list()}))
}

async fn get_run(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(svc.record(&id)?))
}

async fn steer(State(svc): State<Arc<Service>>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let cmd: SteeringCommand = parse(&body)?;
    Ok(Json(svc.steer(&id, cmd)?))
}

async fn snapshot(State(svc): State<Arc<Service>>, Path(id): Path<String>, view: View) -> ApiResult<impl IntoResponse> {
    Ok(Json(svc.snapshot(&id, view)?))
}

#[derive(Deserialize)]
struct EventsQuery {
    from_seq: Option<u64>,
}

async fn stream_events(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let last_seen = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok());
    let from = q.from_seq.or(last_seen.map(|s| s + 1)).unwrap_or(0);
    let cursor = svc.cursor(&id, from)?;
    let stream = futures::stream::unfold(cursor, |mut cursor| async move {
        let e = cursor.next().await?;
        let kind = serde_json::to_value(e.kind())
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let sse = Event::default().id(e.seq.to_string()).event(kind).data(e.to_json_line());
        Some((Ok(sse), cursor))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
