//! HTTP/JSON endpoints.
//!
//! Handlers read one immutable [`ModelSet`] snapshot per request, so
//! responses depend only on the loaded checkpoints and the request body.

use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use setpiece::cornergraph::{CornerGraph, PlayerNode, Team};
use setpiece::heads::{generate_adjustment, predict_receiver, predict_shot, SampleOptions};
use setpiece::retrieval::{embed, Neighbor, Side};

use crate::models::ModelSet;

/// Upper bound on samples per generation request.
pub const MAX_SAMPLES: usize = 64;
pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 1000;

/// The one error object every non-success response carries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub detail: Option<String>,
    #[serde(skip)]
    status: u16,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>, detail: Option<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
            detail,
            status: status.as_u16(),
        }
    }

    pub fn invalid_corner(detail: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_corner", "the corner payload is not a valid corner record", Some(detail.to_string()))
    }

    pub fn invalid_request(message: impl Into<String>, detail: Option<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message, detail)
    }

    pub fn model_unavailable(what: &str) -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "model_unavailable",
            format!("no {what} is loaded"),
            None,
        )
    }

    pub fn internal(detail: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "the request could not be served", Some(detail.to_string()))
    }

    pub fn status(&self) -> StatusCode {
        StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), json_body(&self)).into_response()
    }
}

fn json_body<T: Serialize>(v: &T) -> Response {
    let text = serde_json::to_string(v).expect("responses serialize");
    ([(header::CONTENT_TYPE, "application/json")], text).into_response()
}

fn ok<T: Serialize>(v: &T) -> Result<Response, ApiError> {
    Ok(json_body(v))
}

/// Shared, swappable model snapshot. Empty until checkpoints load.
#[derive(Clone, Default)]
pub struct AppState {
    models: Arc<RwLock<Option<Arc<ModelSet>>>>,
}

impl AppState {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn loaded(models: ModelSet) -> Self {
        let state = Self::default();
        state.install(models);
        state
    }

    /// Atomically replaces the snapshot; requests in flight keep the old one.
    pub fn install(&self, models: ModelSet) {
        *self.models.write().expect("model lock") = Some(Arc::new(models));
    }

    fn snapshot(&self) -> Result<Arc<ModelSet>, ApiError> {
        self.models
            .read()
            .expect("model lock")
            .clone()
            .ok_or_else(|| ApiError::model_unavailable("checkpoint set"))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/corners", get(corners))
        .route("/v1/predict/receiver", post(receiver))
        .route("/v1/predict/shot", post(shot))
        .route("/v1/generate", post(generate))
        .route("/v1/retrieve", post(retrieve))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint", None) })
        .with_state(state)
}

fn parse_json(body: &Bytes) -> Result<Value, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::invalid_request("the body is not valid JSON", Some(e.to_string())))
}

/// The `corner` member, or the whole body when it is a bare record.
fn take_corner(body: &mut Value) -> Result<CornerGraph, ApiError> {
    let raw = if let Some(v) = body.get_mut("corner") {
        v.take()
    } else if body.get("players").is_some() {
        body.take()
    } else {
        return Err(ApiError::invalid_corner("missing field `corner`"));
    };
    serde_json::from_value(raw).map_err(ApiError::invalid_corner)
}

fn fields<T: DeserializeOwned>(body: Value) -> Result<T, ApiError> {
    serde_json::from_value(body).map_err(|e| ApiError::invalid_request("bad request fields", Some(e.to_string())))
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    checkpoint_versions: std::collections::BTreeMap<String, u32>,
    corpus_size: usize,
}

async fn health(State(state): State<AppState>) -> Result<Response, ApiError> {
    let m = state.snapshot()?;
    ok(&Health {
        status: "ok",
        checkpoint_versions: m.versions.clone(),
        corpus_size: m.corpus.len(),
    })
}

#[derive(Deserialize)]
struct PageQuery {
    limit: Option<usize>,
    #[serde(default)]
    offset: usize,
}

#[derive(Serialize)]
struct CornerPage<'a> {
    corners: &'a [CornerGraph],
    offset: usize,
    total: usize,
}

async fn corners(State(state): State<AppState>, query: Result<Query<PageQuery>, axum::extract::rejection::QueryRejection>) -> Result<Response, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::invalid_request("bad query string", Some(e.body_text())))?;
    let limit = q.limit.unwrap_or(DEFAULT_PAGE);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::invalid_request(format!("limit must be in 1..={MAX_PAGE}"), None));
    }
    let m = state.snapshot()?;
    let start = q.offset.min(m.corpus.len());
    let end = (start + limit).min(m.corpus.len());
    ok(&CornerPage {
        corners: &m.corpus[start..end],
        offset: start,
        total: m.corpus.len(),
    })
}

#[derive(Serialize)]
struct ReceiverResponse {
    probs: Vec<f64>,
    top3: Vec<usize>,
}

async fn receiver(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let m = state.snapshot()?;
    let c = take_corner(&mut parse_json(&body)?)?;
    let model = m.receiver.as_ref().ok_or_else(|| ApiError::model_unavailable("receiver model"))?;
    let r = predict_receiver(&c, model).map_err(ApiError::internal)?;
    ok(&ReceiverResponse {
        probs: r.receiver_probs.expect("receiver report"),
        top3: r.top3.expect("receiver report"),
    })
}

#[derive(Serialize)]
struct PerReceiver {
    index: usize,
    p_receiver: f64,
    p_shot_given: f64,
}

#[derive(Serialize)]
struct ShotResponse {
    p_shot: f64,
    per_receiver: Vec<PerReceiver>,
}

fn shot_probability(m: &ModelSet, c: &CornerGraph) -> Result<(f64, Vec<PerReceiver>), ApiError> {
    let receiver = m.receiver.as_ref().ok_or_else(|| ApiError::model_unavailable("receiver model"))?;
    let shot = m.shot.as_ref().ok_or_else(|| ApiError::model_unavailable("shot model"))?;
    let r = predict_shot(c, receiver, shot).map_err(ApiError::internal)?;
    let per = r
        .per_receiver
        .expect("shot report")
        .into_iter()
        .map(|p| PerReceiver {
            index: p.index,
            p_receiver: p.p_receiver,
            p_shot_given: p.p_shot_given_receiver,
        })
        .collect();
    Ok((r.shot_prob.expect("shot report"), per))
}

async fn shot(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let m = state.snapshot()?;
    let c = take_corner(&mut parse_json(&body)?)?;
    let (p_shot, per_receiver) = shot_probability(&m, &c)?;
    ok(&ShotResponse { p_shot, per_receiver })
}

/// Accepts `true`/`false` or the dataset's `0`/`1`.
fn outcome_flag<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Flag {
        Bool(bool),
        Int(u8),
    }
    match Flag::deserialize(d)? {
        Flag::Bool(b) => Ok(b),
        Flag::Int(0) => Ok(false),
        Flag::Int(1) => Ok(true),
        Flag::Int(n) => Err(serde::de::Error::custom(format!("outcome must be 0 or 1, got {n}"))),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateRequest {
    team: Team,
    #[serde(deserialize_with = "outcome_flag")]
    outcome: bool,
    n_samples: usize,
    seed: u64,
}

#[derive(Serialize)]
struct GeneratedSample {
    players: Vec<PlayerNode>,
    p_shot: f64,
}

#[derive(Serialize)]
struct GenerateResponse {
    team: Team,
    outcome: bool,
    samples: Vec<GeneratedSample>,
    p_shot_before: f64,
}

async fn generate(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let m = state.snapshot()?;
    let mut body = parse_json(&body)?;
    let c = take_corner(&mut body)?;
    if let Some(o) = body.as_object_mut() {
        o.remove("corner");
    }
    let req: GenerateRequest = fields(body)?;
    if req.n_samples == 0 || req.n_samples > MAX_SAMPLES {
        return Err(ApiError::invalid_request(format!("n_samples must be in 1..={MAX_SAMPLES}"), None));
    }
    let generator = m.generator(req.team).ok_or_else(|| ApiError::model_unavailable(&format!("{} generator", req.team)))?;
    let receiver = m.receiver.as_ref().ok_or_else(|| ApiError::model_unavailable("receiver model"))?;
    let shot = m.shot.as_ref().ok_or_else(|| ApiError::model_unavailable("shot model"))?;
    let options = SampleOptions {
        n_samples: req.n_samples,
        seed: req.seed,
        noise_scale: 1.0,
    };
    let r = generate_adjustment(&c, req.outcome, options, generator, receiver, shot).map_err(ApiError::internal)?;
    ok(&GenerateResponse {
        team: req.team,
        outcome: req.outcome,
        p_shot_before: r.p_shot_before.expect("generation report"),
        samples: r
            .samples
            .expect("generation report")
            .into_iter()
            .map(|s| GeneratedSample {
                players: s.players,
                p_shot: s.p_shot,
            })
            .collect(),
    })
}

fn default_k() -> usize {
    5
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrieveRequest {
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default)]
    side: Side,
}

#[derive(Serialize)]
struct RetrieveResponse {
    side: Side,
    neighbors: Vec<Neighbor>,
    truncated: bool,
}

async fn retrieve(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let m = state.snapshot()?;
    let mut body = parse_json(&body)?;
    let c = take_corner(&mut body)?;
    if let Some(o) = body.as_object_mut() {
        o.remove("corner");
    }
    let req: RetrieveRequest = fields(body)?;
    if req.k == 0 {
        return Err(ApiError::invalid_request("k must be at least 1", None));
    }
    let receiver = m.receiver.as_ref().ok_or_else(|| ApiError::model_unavailable("receiver model"))?;
    let index = m.index(req.side).ok_or_else(|| ApiError::model_unavailable("retrieval corpus"))?;
    let query = embed(&c, receiver, req.side).map_err(ApiError::internal)?;
    let hits = index.nearest(&query, req.k, true).map_err(ApiError::internal)?;
    ok(&RetrieveResponse {
        side: req.side,
        neighbors: hits.neighbors,
        truncated: hits.truncated,
    })
}
