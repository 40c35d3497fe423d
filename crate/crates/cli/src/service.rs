//! HTTP generation API over a loaded checkpoint.
//!
//! The model is an immutable snapshot behind an `Arc`; handlers clone the
//! `Arc` and never touch shared state again, so a reload only swaps the
//! pointer and in-flight requests finish on the old snapshot.

use crate::error::{CliError, Result};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use glyphgen::analysis::{impression_interpolation_grid, noise_interpolation_grid};
use glyphgen::checkpoint::load_checkpoint;
use glyphgen::glyph::parse_chars;
use glyphgen::training::Model;
use glyphgen::GlyphImage;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

pub const ADMIN_TOKEN_ENV: &str = "GLYPHGEN_ADMIN_TOKEN";
pub const ADMIN_TOKEN_HEADER: &str = "x-admin-token";
pub const MAX_IMPRESSIONS: usize = 16;
pub const MAX_CHARS: usize = 26;
pub const MAX_LAMBDAS: usize = 33;
pub const EFFECTIVE_TOP: usize = 20;

pub fn admin_token_from_env() -> Option<String> {
    std::env::var(ADMIN_TOKEN_ENV).ok().filter(|t| !t.is_empty())
}

pub struct AppState {
    model: RwLock<Option<Arc<Model>>>,
    checkpoint: RwLock<Option<PathBuf>>,
    admin_token: Option<String>,
}

impl AppState {
    pub fn new(model: Option<Model>, checkpoint: Option<PathBuf>, admin_token: Option<String>) -> Arc<Self> {
        Arc::new(Self {
            model: RwLock::new(model.map(Arc::new)),
            checkpoint: RwLock::new(checkpoint),
            admin_token,
        })
    }

    pub fn snapshot(&self) -> Option<Arc<Model>> {
        self.model.read().expect("model lock").clone()
    }

    pub fn swap(&self, model: Model, checkpoint: Option<PathBuf>) {
        *self.model.write().expect("model lock") = Some(Arc::new(model));
        if checkpoint.is_some() {
            *self.checkpoint.write().expect("checkpoint lock") = checkpoint;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedLabel {
    pub label: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub impressions: Vec<WeightedLabel>,
    pub chars: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    /// Base64 PNG per char, in request order.
    pub images: Vec<String>,
    pub chars: String,
    pub effective_condition: Vec<WeightedLabel>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpolationMode {
    Impression,
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolateRequest {
    pub mode: InterpolationMode,
    /// Endpoint A (impression mode) or the fixed impressions (noise mode).
    pub from: Vec<WeightedLabel>,
    /// Endpoint B, impression mode only.
    #[serde(default)]
    pub to: Option<Vec<WeightedLabel>>,
    pub lambdas: Vec<f64>,
    pub chars: String,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Second noise seed, noise mode only.
    #[serde(default)]
    pub seed_2: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub lambda: f64,
    pub images: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolateResponse {
    pub mode: InterpolationMode,
    pub frames: Vec<Frame>,
    pub seed: u64,
    pub seed_2: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub label: String,
    pub frequency: usize,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn unavailable() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "no model loaded")
    }
}

impl From<glyphgen::Error> for ApiError {
    fn from(e: glyphgen::Error) -> Self {
        use glyphgen::Error as E;
        match &e {
            E::UnknownLabel(label) => Self {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: json!({ "error": e.to_string(), "label": label }),
            },
            E::InvalidChar(_) | E::InvalidArgument(_) | E::NoPositiveLabels => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
            }
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))
}

fn unprocessable(message: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, message)
}

fn validate_impressions(list: &[WeightedLabel]) -> ApiResult<Vec<(String, f64)>> {
    if list.is_empty() || list.len() > MAX_IMPRESSIONS {
        return Err(unprocessable(format!("between 1 and {MAX_IMPRESSIONS} impressions required")));
    }
    list.iter()
        .map(|w| {
            if w.weight > 0.0 && w.weight <= 1.0 {
                Ok((w.label.clone(), w.weight))
            } else {
                Err(unprocessable(format!("weight {} for {:?} not in (0, 1]", w.weight, w.label)))
            }
        })
        .collect()
}

fn validate_chars(chars: &str) -> ApiResult<()> {
    let n = chars.chars().count();
    if n == 0 || n > MAX_CHARS {
        return Err(unprocessable(format!("between 1 and {MAX_CHARS} chars required")));
    }
    parse_chars(chars)?;
    Ok(())
}

/// Labels resolved before any rendering so the 422 names the first
/// unknown one.
fn check_labels(model: &Model, list: &[(String, f64)]) -> ApiResult<()> {
    for (label, _) in list {
        if model.vocabulary.index_of(label).is_none() {
            return Err(glyphgen::Error::UnknownLabel(label.clone()).into());
        }
    }
    Ok(())
}

fn encode(images: &[GlyphImage]) -> ApiResult<Vec<String>> {
    images
        .iter()
        .map(|g| Ok(BASE64.encode(g.encode_png()?)))
        .collect()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

/// The body of a successful `/generate`.
pub fn generate_response(model: &Model, req: &GenerateRequest) -> ApiResult<GenerateResponse> {
    let imps = validate_impressions(&req.impressions)?;
    validate_chars(&req.chars)?;
    check_labels(model, &imps)?;
    let seed = req.seed.unwrap_or(0);
    let cond = model.condition(&model.impression_vector(&imps)?)?;
    let images = model.render(&cond, &model.noise(seed), &parse_chars(&req.chars)?)?;
    Ok(GenerateResponse {
        images: encode(&images)?,
        chars: req.chars.clone(),
        effective_condition: model
            .effective_condition(&cond.completed, EFFECTIVE_TOP)
            .into_iter()
            .map(|(label, weight)| WeightedLabel { label, weight })
            .collect(),
        seed,
    })
}

/// The body of a successful `/interpolate`.
pub fn interpolate_response(model: &Model, req: &InterpolateRequest) -> ApiResult<InterpolateResponse> {
    let from = validate_impressions(&req.from)?;
    validate_chars(&req.chars)?;
    check_labels(model, &from)?;
    if req.lambdas.is_empty() || req.lambdas.len() > MAX_LAMBDAS {
        return Err(unprocessable(format!("between 1 and {MAX_LAMBDAS} lambdas required")));
    }
    let seed = req.seed.unwrap_or(0);
    let (grid, seed_2) = match req.mode {
        InterpolationMode::Impression => {
            if req.seed_2.is_some() {
                return Err(unprocessable("seed_2 applies to noise mode only"));
            }
            let to = validate_impressions(req.to.as_deref().ok_or_else(|| unprocessable("impression mode needs `to`"))?)?;
            check_labels(model, &to)?;
            (impression_interpolation_grid(model, &from, &to, &req.lambdas, &req.chars, seed)?, None)
        }
        InterpolationMode::Noise => {
            if req.to.is_some() {
                return Err(unprocessable("`to` applies to impression mode only"));
            }
            let seed_2 = req.seed_2.unwrap_or(seed.wrapping_add(1));
            (noise_interpolation_grid(model, &from, seed, seed_2, &req.lambdas, &req.chars)?, Some(seed_2))
        }
    };
    let frames = grid
        .lambdas
        .iter()
        .zip(&grid.rows)
        .map(|(&lambda, row)| {
            Ok(Frame {
                lambda,
                images: encode(row)?,
            })
        })
        .collect::<ApiResult<_>>()?;
    Ok(InterpolateResponse {
        mode: req.mode,
        frames,
        seed,
        seed_2,
    })
}

pub fn label_listing(model: &Model) -> Vec<LabelEntry> {
    let v = &model.vocabulary;
    v.by_frequency()
        .into_iter()
        .map(|i| LabelEntry {
            label: v.name(i).to_string(),
            frequency: v.frequency()[i],
        })
        .collect()
}

async fn labels(State(state): State<Arc<AppState>>) -> ApiResult<Json<Vec<LabelEntry>>> {
    let model = state.snapshot().ok_or_else(ApiError::unavailable)?;
    Ok(Json(label_listing(&model)))
}

async fn generate(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<GenerateResponse>> {
    let req: GenerateRequest = parse_body(&body)?;
    let model = state.snapshot().ok_or_else(ApiError::unavailable)?;
    blocking(move || generate_response(&model, &req)).await.map(Json)
}

async fn interpolate(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<InterpolateResponse>> {
    let req: InterpolateRequest = parse_body(&body)?;
    let model = state.snapshot().ok_or_else(ApiError::unavailable)?;
    blocking(move || interpolate_response(&model, &req)).await.map(Json)
}

async fn healthz(State(state): State<Arc<AppState>>) -> Response {
    match state.snapshot() {
        Some(m) => (
            StatusCode::OK,
            Json(json!({ "status": "ok", "iteration": m.iteration, "config_hash": m.config_hash })),
        )
            .into_response(),
        None => ApiError::unavailable().into_response(),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReloadRequest {
    #[serde(default)]
    checkpoint: Option<PathBuf>,
}

async fn reload(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let Some(expected) = state.admin_token.as_deref() else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "admin endpoint disabled"));
    };
    let given = headers.get(ADMIN_TOKEN_HEADER).and_then(|v| v.to_str().ok());
    if given != Some(expected) {
        return Err(ApiError::new(StatusCode::UNAUTHORIZED, "bad admin token"));
    }
    let req: ReloadRequest = if body.is_empty() {
        ReloadRequest::default()
    } else {
        parse_body(&body)?
    };
    let path = match req.checkpoint {
        Some(p) => p,
        None => state
            .checkpoint
            .read()
            .expect("checkpoint lock")
            .clone()
            .ok_or_else(|| unprocessable("no checkpoint path known; pass one"))?,
    };
    let p = path.clone();
    let model = blocking(move || load_checkpoint(&p).map_err(|e| unprocessable(e.to_string()))).await?;
    let body = json!({ "iteration": model.iteration, "config_hash": model.config_hash, "checkpoint": path });
    state.swap(model, Some(path));
    Ok((StatusCode::OK, Json(body)).into_response())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/labels", get(labels))
        .route("/generate", post(generate))
        .route("/interpolate", post(interpolate))
        .route("/healthz", get(healthz))
        .route("/admin/reload", post(reload))
        .with_state(state)
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(state: Arc<AppState>, addr: &str) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Server(format!("bind {addr}: {e}")))?;
    eprintln!("listening on {addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Server(e.to_string()))
}
