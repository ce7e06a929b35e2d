use std::sync::Arc;

use atk_core::data::{canonicalize_spans, LabelSpan, SegmentLabels};
use atk_core::detect::{DetectedSpan, Threshold};
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::OnceCell;
use tower_http::services::ServeDir;

use crate::{label_queue, AppState};

type Shared = Arc<AppState>;

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub segment_id: String,
    pub date: NaiveDate,
    pub labeled: bool,
    pub label_count: usize,
    pub suggestions_available: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Overlay {
    pub segment_ids: Vec<String>,
    /// `channels[c][k]` is the trace of `segment_ids[k]` on channel `c`.
    pub channels: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentPayload {
    pub segment_id: String,
    pub date: NaiveDate,
    pub data: Vec<Vec<f64>>,
    pub labels: Option<SegmentLabels>,
    pub overlay: Overlay,
    pub suggestions_available: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SuggestionRecord {
    pub segment_id: String,
    pub weights_id: String,
    pub threshold: Threshold,
    /// Raw samples per score; spans and scores are on the model grid.
    pub downsample: usize,
    pub scores: Vec<f64>,
    pub spans: Vec<DetectedSpan>,
}

#[derive(Debug, Deserialize)]
struct LabelsBody {
    segment_id: Option<String>,
    spans: Vec<LabelSpan>,
    #[serde(default)]
    annotator: Option<String>,
    #[serde(default)]
    saved_at: Option<DateTime<Utc>>,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<crate::ServiceError> for ApiError {
    fn from(e: crate::ServiceError) -> Self {
        ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn lookup(state: &AppState, id: &str) -> ApiResult<usize> {
    state
        .index
        .get(id)
        .copied()
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown segment id {id:?}")))
}

pub fn router(state: Shared) -> Router {
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/api/segments", get(list_segments))
        .route("/api/segments/{id}", get(get_segment))
        .route("/api/segments/{id}/labels", get(get_labels).put(put_labels))
        .route("/api/segments/{id}/suggestions", get(get_suggestions))
        .route("/api/queue", get(queue));
    let api = match &state.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    };
    api.with_state(state)
}

async fn not_found() -> ApiError {
    ApiError(StatusCode::NOT_FOUND, "no such endpoint".into())
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn list_segments(State(state): State<Shared>) -> Json<Vec<SegmentSummary>> {
    let store = state.store.lock().await;
    let list = state
        .segments
        .iter()
        .map(|s| {
            let labels = store.get(&s.segment_id);
            SegmentSummary {
                segment_id: s.segment_id.clone(),
                date: s.date,
                labeled: labels.is_some(),
                label_count: labels.map_or(0, |l| l.spans.len()),
                suggestions_available: state.detector.is_some(),
            }
        })
        .collect();
    Json(list)
}

async fn get_segment(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<SegmentPayload>> {
    let i = lookup(&state, &id)?;
    let seg = &state.segments[i];
    let others: Vec<_> = state.segments.iter().filter(|s| s.segment_id != id).collect();
    let overlay = Overlay {
        segment_ids: others.iter().map(|s| s.segment_id.clone()).collect(),
        channels: (0..seg.data.len())
            .map(|c| others.iter().map(|s| s.data[c].clone()).collect())
            .collect(),
    };
    let labels = state.store.lock().await.get(&id).cloned();
    Ok(Json(SegmentPayload {
        segment_id: seg.segment_id.clone(),
        date: seg.date,
        data: seg.data.clone(),
        labels,
        overlay,
        suggestions_available: state.detector.is_some(),
    }))
}

async fn get_labels(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Option<SegmentLabels>>> {
    lookup(&state, &id)?;
    Ok(Json(state.store.lock().await.get(&id).cloned()))
}

async fn put_labels(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<SegmentLabels>> {
    let i = lookup(&state, &id)?;
    let body: LabelsBody = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, format!("malformed labels: {e}")))?;
    if body.segment_id.as_deref().is_some_and(|b| b != id) {
        return Err(ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            "segment_id does not match the path".into(),
        ));
    }
    let len = state.segments[i].len();
    let spans =
        canonicalize_spans(&body.spans, len).map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let record = SegmentLabels {
        segment_id: id,
        spans,
        annotator: body.annotator.unwrap_or_default(),
        saved_at: body.saved_at.unwrap_or_else(Utc::now),
    };
    let stored = state.store.lock().await.put(record)?;
    Ok(Json(stored))
}

async fn get_suggestions(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let i = lookup(&state, &id)?;
    let Some(detector) = state.detector.clone() else {
        return Err(ApiError(StatusCode::CONFLICT, "no model loaded".into()));
    };
    let key = (detector.spec.weights_id.clone(), id);
    let cell = {
        let mut cache = state.suggestions.lock().await;
        cache.entry(key).or_insert_with(|| Arc::new(OnceCell::new())).clone()
    };
    let body = cell
        .get_or_try_init(|| {
            let state = state.clone();
            async move {
                tokio::task::spawn_blocking(move || suggestion_body(&state, &detector, i))
                    .await
                    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
            }
        })
        .await?;
    Ok(([(axum::http::header::CONTENT_TYPE, "application/json")], body.clone()).into_response())
}

fn suggestion_body(state: &AppState, detector: &atk_core::pipeline::Detector, i: usize) -> ApiResult<String> {
    let seg = &state.segments[i];
    let (scores, spans) = detector
        .detect(seg)
        .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let record = SuggestionRecord {
        segment_id: seg.segment_id.clone(),
        weights_id: detector.spec.weights_id.clone(),
        threshold: detector.spec.threshold.clone(),
        downsample: detector.spec.downsample,
        scores: scores.scores,
        spans,
    };
    serde_json::to_string(&record).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

async fn queue(State(state): State<Shared>) -> Json<serde_json::Value> {
    let ids: Vec<String> = state.segments.iter().map(|s| s.segment_id.clone()).collect();
    let queue = label_queue(&ids);
    Json(json!({
        "segment_ids": queue,
        "segments": ids.len(),
        "repeated": queue.len() - ids.len(),
    }))
}
