//! HTTP endpoints. Bodies are JSON; geometry is a flat `[x0, y0, z0, ...]`
//! array. Errors come back as `{"error": kind, "message": text}`.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::middleware;
use axum::routing::{get, post};
use axum::{Json, Router};
use flowquery_bridge::{extract_tags, BridgeError, ChatTurn, Role, TagConcept, TagMode};
use flowquery_core::descriptor::Segment;
use flowquery_core::matcher::MatchResult;
use flowquery_core::{FlowError, Vec3};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::limit::RequestBodyLimitLayer;
use tower_http::trace::TraceLayer;

use crate::state::AppState;

pub const MAX_PAGE: usize = 1000;
pub const MAX_K: usize = 1000;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self { status, kind, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.kind, "message": self.message }))).into_response()
    }
}

impl From<FlowError> for ApiError {
    fn from(e: FlowError) -> Self {
        let (status, kind) = match &e {
            FlowError::EmptyQuery => (StatusCode::BAD_REQUEST, "EmptyQuery"),
            FlowError::BadParam(_) => (StatusCode::BAD_REQUEST, "BadParam"),
            FlowError::ShapeMismatch { .. } => (StatusCode::BAD_REQUEST, "ShapeMismatch"),
            FlowError::EmptyIndex => (StatusCode::SERVICE_UNAVAILABLE, "EmptyIndex"),
            FlowError::ServiceUnavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "ServiceUnavailable"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "Internal"),
        };
        Self::new(status, kind, e.to_string())
    }
}

impl From<BridgeError> for ApiError {
    fn from(e: BridgeError) -> Self {
        let (status, kind) = match &e {
            BridgeError::ServiceUnavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "ServiceUnavailable"),
            BridgeError::Timeout(_) => (StatusCode::GATEWAY_TIMEOUT, "Timeout"),
            BridgeError::BadResponse(_) => (StatusCode::BAD_GATEWAY, "BadResponse"),
            BridgeError::BadInput(_) => (StatusCode::BAD_REQUEST, "BadInput"),
            BridgeError::Core(_) | BridgeError::Image(_) | BridgeError::Io(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "Internal")
            }
        };
        Self::new(status, kind, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        if r.status() == StatusCode::PAYLOAD_TOO_LARGE {
            Self::new(StatusCode::PAYLOAD_TOO_LARGE, "PayloadTooLarge", r.body_text())
        } else {
            Self::bad_request(r.body_text())
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))
}

fn flat(points: &[Vec3]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

pub fn router(state: Arc<AppState>, max_body_bytes: usize) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/field", get(field))
        .route("/streamlines", get(streamlines))
        .route("/segments/{id}", get(segment))
        .route("/query", post(query))
        .route("/chat", post(chat))
        .route("/tags", get(list_tags).post(post_tags))
        .with_state(state)
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .layer(middleware::map_response(json_payload_too_large))
        .layer(RequestBodyLimitLayer::new(max_body_bytes))
        .layer(TraceLayer::new_for_http())
}

/// The body-limit layer answers 413 with plain text; rewrite it to the
/// usual error shape.
async fn json_payload_too_large(resp: Response) -> Response {
    if resp.status() == StatusCode::PAYLOAD_TOO_LARGE
        && resp.headers().get(axum::http::header::CONTENT_TYPE).is_none_or(|v| v != "application/json")
    {
        return ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "PayloadTooLarge", "request body exceeds the configured limit")
            .into_response();
    }
    resp
}

async fn health(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "fingerprint": s.data.fingerprint(),
        "segments": s.data.segments.len(),
        "indexed": s.data.index.as_ref().map_or(0, |i| i.len()),
    }))
}

async fn field(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let d = &s.data;
    Json(json!({
        "loaded": d.field.is_some(),
        "field": d.field,
        "streamlines": d.streamlines.len(),
        "segments": d.segments.len(),
    }))
}

#[derive(Debug, Deserialize)]
struct Page {
    #[serde(default)]
    offset: usize,
    limit: Option<usize>,
    /// Keep every `stride`-th point (the last point is always kept).
    stride: Option<usize>,
}

#[derive(Debug, Serialize)]
struct StreamlineItem {
    id: u64,
    termination: flowquery_core::tracer::Termination,
    points: Vec<f64>,
}

async fn streamlines(State(s): State<Arc<AppState>>, page: Result<Query<Page>, axum::extract::rejection::QueryRejection>) -> ApiResult<serde_json::Value> {
    let Query(page) = page.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let limit = page.limit.unwrap_or(100);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::bad_request(format!("limit must be in 1..={MAX_PAGE}")));
    }
    let stride = page.stride.unwrap_or(1);
    if stride == 0 {
        return Err(ApiError::bad_request("stride must be positive"));
    }
    let all = &s.data.streamlines;
    let items: Vec<StreamlineItem> = all
        .iter()
        .skip(page.offset)
        .take(limit)
        .map(|l| {
            let n = l.points.len();
            let kept: Vec<Vec3> =
                l.points.iter().enumerate().filter(|(i, _)| i % stride == 0 || i + 1 == n).map(|(_, p)| *p).collect();
            StreamlineItem { id: l.seed_id, termination: l.termination, points: flat(&kept) }
        })
        .collect();
    Ok(Json(json!({ "total": all.len(), "offset": page.offset, "items": items })))
}

#[derive(Debug, Serialize)]
struct SegmentBody {
    id: u64,
    streamline_id: u64,
    level: u32,
    arc_start: f64,
    arc_end: f64,
    points: Vec<f64>,
}

impl From<&Segment> for SegmentBody {
    fn from(s: &Segment) -> Self {
        Self {
            id: s.id,
            streamline_id: s.streamline_id,
            level: s.level,
            arc_start: s.arc_start,
            arc_end: s.arc_end,
            points: flat(&s.points),
        }
    }
}

async fn segment(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<SegmentBody> {
    let id: u64 = id.parse().map_err(|_| ApiError::bad_request(format!("`{id}` is not a segment id")))?;
    s.data
        .segment(id)
        .map(|seg| Json(SegmentBody::from(seg)))
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "NotFound", format!("no segment {id}")))
}

#[derive(Debug, Deserialize)]
struct QueryRequest {
    text: String,
    #[serde(default = "default_k")]
    k: usize,
}

fn default_k() -> usize {
    10
}

#[derive(Debug, Serialize)]
struct QueryHit {
    rank: usize,
    segment_id: u64,
    score: f64,
    streamline_id: u64,
    level: u32,
    points: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct QueryResponse {
    fingerprint: String,
    text: String,
    k: usize,
    results: Vec<QueryHit>,
}

async fn query(State(s): State<Arc<AppState>>, body: Result<Json<QueryRequest>, JsonRejection>) -> ApiResult<QueryResponse> {
    let Json(req) = body?;
    if req.k > MAX_K {
        return Err(ApiError::from(FlowError::BadParam(format!("k must be at most {MAX_K}"))));
    }
    let state = s.clone();
    let text = req.text.clone();
    let hits: Vec<MatchResult> = blocking(move || {
        let idx = state.data.index.as_ref().ok_or(FlowError::EmptyIndex)?;
        idx.query(state.embedder.as_ref(), &text, req.k)
    })
    .await??;
    let data = &s.data;
    let results = hits
        .into_iter()
        .map(|h| {
            let seg = data.segment(h.segment_id).expect("index ids match the segment store");
            QueryHit {
                rank: h.rank,
                segment_id: h.segment_id,
                score: h.score,
                streamline_id: seg.streamline_id,
                level: seg.level,
                points: flat(&seg.points),
            }
        })
        .collect();
    Ok(Json(QueryResponse { fingerprint: data.fingerprint().unwrap_or_default(), text: req.text, k: req.k, results }))
}

#[derive(Debug, Deserialize)]
struct ChatRequest {
    message: String,
}

async fn chat(State(s): State<Arc<AppState>>, body: Result<Json<ChatRequest>, JsonRejection>) -> ApiResult<serde_json::Value> {
    let Json(req) = body?;
    let user = ChatTurn::user(req.message);
    user.validate()?;
    let _gate = s.chat_gate.lock().await;
    let mut history = s.session.lock().await.history.clone();
    history.push(user.clone());
    let client = s.chat.clone();
    let reply = blocking(move || client.chat(&history)).await??;
    let mut session = s.session.lock().await;
    session.history.push(user);
    session.history.push(reply.clone());
    let index = session.history.len() - 1;
    Ok(Json(json!({ "turn": reply, "index": index })))
}

async fn list_tags(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let session = s.session.lock().await;
    Json(json!({ "tags": session.tags.tags() }))
}

#[derive(Debug, Default, Deserialize)]
struct TagRequest {
    /// Text to extract from; defaults to the latest assistant turn.
    text: Option<String>,
    /// Source turn recorded on the new tags.
    turn: Option<usize>,
    mode: Option<TagMode>,
}

async fn post_tags(State(s): State<Arc<AppState>>, body: Result<Json<TagRequest>, JsonRejection>) -> ApiResult<serde_json::Value> {
    let Json(req) = body?;
    let mode = req.mode.unwrap_or(s.tag_mode);
    let (turn, index) = {
        let session = s.session.lock().await;
        match req.text {
            Some(text) => (ChatTurn::assistant(text), req.turn.unwrap_or(session.history.len())),
            None => {
                let pick = match req.turn {
                    Some(i) => session.history.get(i).map(|t| (i, t)),
                    None => session.history.iter().enumerate().rev().find(|(_, t)| t.role == Role::Assistant),
                };
                let (i, t) = pick.ok_or_else(|| ApiError::bad_request("no assistant turn to extract tags from"))?;
                (t.clone(), i)
            }
        }
    };
    let client = s.chat.clone();
    let found: Vec<TagConcept> = blocking(move || extract_tags(&turn, index, mode, Some(&client))).await??;
    let mut session = s.session.lock().await;
    let before = session.tags.len();
    session.tags.merge(found);
    let added = &session.tags.tags()[before..];
    Ok(Json(json!({ "added": added, "tags": session.tags.tags() })))
}
