//! HTTP routes and the server-sent event stream.

use std::convert::Infallible;
use std::time::Duration;

use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::Deserialize;
use tokio::sync::broadcast::error::RecvError;
use trafficmon::anomaly::AnomalyEvent;
use trafficmon::ingest::{read_detection_log, CameraRecord};
use trafficmon::queue::read_queue_samples;

use crate::error::ServiceError;
use crate::pipeline::CameraStatus;
use crate::query::{HistoryPoint, QueryResult, Resolution};
use crate::state::AppState;

/// Detection logs are posted in bulk, so ingest bodies may be far larger than the default limit.
const MAX_INGEST_BYTES: usize = 256 << 20;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/cameras", get(list_cameras).post(register_camera))
        .route("/cameras/{id}/status", get(camera_status))
        .route("/cameras/{id}/history", get(camera_history))
        .route("/cameras/{id}/heatmap", get(camera_heatmap))
        .route("/cameras/{id}/frames", post(ingest_frames).layer(DefaultBodyLimit::max(MAX_INGEST_BYTES)))
        .route("/cameras/{id}/queue", post(ingest_queue).layer(DefaultBodyLimit::max(MAX_INGEST_BYTES)))
        .route("/cameras/{id}/finish", post(finish_camera))
        .route("/anomalies", get(list_anomalies))
        .route("/query", get(query))
        .route("/events", get(events))
        .with_state(state)
}

async fn list_cameras(State(s): State<AppState>) -> Json<Vec<CameraStatus>> {
    Json(s.list())
}

async fn register_camera(State(s): State<AppState>, Json(record): Json<CameraRecord>) -> Result<Json<CameraStatus>, ServiceError> {
    s.register(record).map(Json)
}

async fn camera_status(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<CameraStatus>, ServiceError> {
    s.status(&id).map(Json)
}

#[derive(Debug, Deserialize)]
struct HistoryParams {
    from: Option<i64>,
    to: Option<i64>,
    resolution: Option<Resolution>,
}

async fn camera_history(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(p): Query<HistoryParams>,
) -> Result<Json<Vec<HistoryPoint>>, ServiceError> {
    if let (Some(f), Some(t)) = (p.from, p.to) {
        if f >= t {
            return Err(ServiceError::BadRequest("from must precede to".into()));
        }
    }
    s.history(&id, p.from, p.to, p.resolution.unwrap_or(Resolution::Minute)).map(Json)
}

#[derive(Debug, Deserialize)]
struct HeatmapParams {
    days: Option<u32>,
}

async fn camera_heatmap(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(p): Query<HeatmapParams>,
) -> Result<Json<serde_json::Value>, ServiceError> {
    Ok(Json(s.heatmap(&id, p.days.unwrap_or(7))?.to_json()))
}

async fn ingest_frames(State(s): State<AppState>, Path(id): Path<String>, body: String) -> Result<Json<serde_json::Value>, ServiceError> {
    let frames = read_detection_log(body.as_bytes()).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let n = s.ingest_frames(&id, &frames)?;
    Ok(Json(serde_json::json!({ "accepted": n })))
}

async fn ingest_queue(State(s): State<AppState>, Path(id): Path<String>, body: String) -> Result<Json<serde_json::Value>, ServiceError> {
    let samples = read_queue_samples(body.as_bytes()).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let n = s.ingest_queue(&id, &samples)?;
    Ok(Json(serde_json::json!({ "accepted": n })))
}

async fn finish_camera(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<CameraStatus>, ServiceError> {
    s.finish(&id)?;
    s.status(&id).map(Json)
}

#[derive(Debug, Deserialize)]
struct AnomalyParams {
    active: Option<bool>,
}

async fn list_anomalies(State(s): State<AppState>, Query(p): Query<AnomalyParams>) -> Json<Vec<AnomalyEvent>> {
    Json(s.anomalies(p.active.unwrap_or(false)))
}

#[derive(Debug, Deserialize)]
struct QueryParams {
    #[serde(default)]
    q: String,
}

async fn query(State(s): State<AppState>, Query(p): Query<QueryParams>) -> Json<QueryResult> {
    Json(s.query(&p.q))
}

#[derive(Debug, Deserialize)]
struct EventParams {
    camera: Option<String>,
}

async fn events(State(s): State<AppState>, Query(p): Query<EventParams>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = s.subscribe();
    let stream = stream::unfold((rx, p.camera), |(mut rx, camera)| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    if camera.as_deref().is_some_and(|c| c != ev.camera_id()) {
                        continue;
                    }
                    let data = serde_json::to_string(&ev).unwrap_or_default();
                    return Some((Ok(Event::default().event(ev.name()).data(data)), (rx, camera)));
                }
                Err(RecvError::Lagged(n)) => {
                    tracing::warn!(dropped = n, "event subscriber lagging");
                    let e = Event::default().event("lagged").data(n.to_string());
                    return Some((Ok(e), (rx, camera)));
                }
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
}

/// Binds `listen` and serves until the process is stopped.
pub async fn serve(state: AppState) -> Result<(), ServiceError> {
    let addr = state.config().listen.clone();
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    tracing::info!(%addr, "listening");
    state.spawn_stale_watchdog(Duration::from_secs(1));
    axum::serve(listener, router(state)).await?;
    Ok(())
}
