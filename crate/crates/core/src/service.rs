//! HTTP inference service: `POST /generate`, `GET /categories`, `GET /health`.
//!
//! Generation is stateless. Clients keep appearances stable across layout
//! edits by sending back the latents a previous response echoed, as
//! `latent_overrides`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::error::{Error, Result};
use crate::generator::{latents_to_tensor, sample_prior, Generator, LatentCode};
use crate::layout::{validate_layout, CategoryVocabulary, Layout, LayoutJson};
use crate::nn::Mode;
use crate::raster::ImageTensor;
use crate::trainer::load_generator;

pub const DEFAULT_NUM_SAMPLES: usize = 4;
/// Upper bound on `num_samples` per request.
pub const MAX_SAMPLES: usize = 64;
pub const DEFAULT_MAX_BATCH: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub layout: LayoutJson,
    #[serde(default = "default_num_samples")]
    pub num_samples: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub latent_overrides: BTreeMap<usize, LatentCode>,
}

fn default_num_samples() -> usize {
    DEFAULT_NUM_SAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    /// Base64-encoded 8-bit RGB PNGs.
    pub images: Vec<String>,
    /// `latents[sample][object]`.
    pub latents: Vec<Vec<LatentCode>>,
    pub model_version: String,
    /// The seed actually used, drawn at random when the request had none.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_version: Option<String>,
    pub uptime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

/// A loaded generator with its vocabulary and checkpoint identifier.
pub struct Model {
    pub generator: Generator,
    pub vocabulary: CategoryVocabulary,
    pub version: String,
}

impl Model {
    pub fn load(checkpoint: &Path) -> Result<Self> {
        let loaded = load_generator(checkpoint)?;
        Ok(Self {
            generator: loaded.generator,
            vocabulary: loaded.vocabulary,
            version: loaded.version,
        })
    }
}

#[derive(Debug)]
pub enum ServiceError {
    NoModelLoaded,
    OverrideIndexOutOfRange { index: usize, objects: usize },
    Core(Error),
}

impl From<Error> for ServiceError {
    fn from(e: Error) -> Self {
        ServiceError::Core(e)
    }
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NoModelLoaded => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::OverrideIndexOutOfRange { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Core(e) if e.is_validation() => StatusCode::BAD_REQUEST,
            ServiceError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let (error, message) = match self {
            ServiceError::NoModelLoaded => ("NoModelLoaded", "no checkpoint is loaded".to_string()),
            ServiceError::OverrideIndexOutOfRange { index, objects } => (
                "OverrideIndexOutOfRange",
                format!("override for object {index} but layout has {objects} objects"),
            ),
            ServiceError::Core(e) => (e.name(), e.to_string()),
        };
        ErrorBody {
            error: error.to_string(),
            message,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}

/// Per-sample latents: prior draws from `seed`, then overrides. Every prior
/// code is drawn even when overridden, so an override never shifts the
/// random stream of the other objects.
pub fn request_latents(request: &GenerateRequest, objects: usize, latent_dim: usize, seed: u64) -> Vec<Vec<LatentCode>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..request.num_samples)
        .map(|_| {
            let mut codes = sample_prior(&mut rng, objects, latent_dim);
            for (&i, code) in &request.latent_overrides {
                codes[i] = code.clone();
            }
            codes
        })
        .collect()
}

/// Images and latents produced for one request.
pub struct Generated {
    pub images: Vec<ImageTensor>,
    pub latents: Vec<Vec<LatentCode>>,
    pub seed: u64,
}

/// Validates a request and runs the generator in chunks of `max_batch`.
pub fn generate_images(model: &Model, request: &GenerateRequest, max_batch: usize) -> std::result::Result<Generated, ServiceError> {
    let config = model.generator.config();
    if request.num_samples == 0 || request.num_samples > MAX_SAMPLES {
        return Err(Error::InvalidArgument(format!("num_samples must be in 1..={MAX_SAMPLES}")).into());
    }
    let layout = Layout::from_json(&request.layout, &model.vocabulary)?;
    let layout = validate_layout(&layout, config, &model.vocabulary)?;
    let o = layout.len();
    for (&index, code) in &request.latent_overrides {
        if index >= o {
            return Err(ServiceError::OverrideIndexOutOfRange { index, objects: o });
        }
        if code.len() != config.latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "override for object {index} has {} dims, expected {}",
                code.len(),
                config.latent_dim
            ))
            .into());
        }
        if code.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("override for object {index} is not finite")).into());
        }
    }
    let seed = request.seed.unwrap_or_else(|| rand::rng().random());
    let latents = request_latents(request, o, config.latent_dim, seed);
    let g = &model.generator;
    let mut images = Vec::with_capacity(latents.len());
    for chunk in latents.chunks(max_batch.max(1)) {
        let flat: Vec<LatentCode> = chunk.iter().flatten().cloned().collect();
        let z = latents_to_tensor(&flat, config.latent_dim, g.dtype(), g.device())?;
        let layouts = vec![&layout; chunk.len()];
        let out = g.generate_batch(&layouts, &z, Mode::Eval)?;
        for i in 0..chunk.len() {
            images.push(ImageTensor::from_tensor(&out.get(i).map_err(Error::from)?)?);
        }
    }
    Ok(Generated { images, latents, seed })
}

/// [`generate_images`] with PNG + base64 encoding.
pub fn generate(model: &Model, request: &GenerateRequest, max_batch: usize) -> std::result::Result<GenerateResponse, ServiceError> {
    let out = generate_images(model, request, max_batch)?;
    let images = out
        .images
        .iter()
        .map(|img| Ok(base64::engine::general_purpose::STANDARD.encode(img.to_png_bytes()?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(GenerateResponse {
        images,
        latents: out.latents,
        model_version: model.version.clone(),
        seed: out.seed,
    })
}

/// Shared service state. The model sits behind a lock holding an `Arc`, so
/// a swap is atomic and in-flight requests finish on the model they started
/// with.
pub struct ServiceState {
    model: RwLock<Option<Arc<Model>>>,
    started: Instant,
    max_batch: usize,
}

impl ServiceState {
    pub fn new(model: Option<Model>, max_batch: usize) -> Arc<Self> {
        Arc::new(Self {
            model: RwLock::new(model.map(Arc::new)),
            started: Instant::now(),
            max_batch: max_batch.max(1),
        })
    }

    pub fn model(&self) -> Option<Arc<Model>> {
        self.model.read().expect("model lock").clone()
    }

    /// Replaces the served model; `None` unloads it.
    pub fn swap_model(&self, model: Option<Model>) {
        *self.model.write().expect("model lock") = model.map(Arc::new);
    }

    /// Loads a checkpoint and swaps it in. The old model stays on error.
    pub fn reload(&self, checkpoint: &Path) -> Result<()> {
        let model = Model::load(checkpoint)?;
        self.swap_model(Some(model));
        Ok(())
    }

    pub fn health(&self) -> HealthResponse {
        let model = self.model();
        HealthResponse {
            status: if model.is_some() { "ok" } else { "degraded" }.to_string(),
            model_version: model.map(|m| m.version.clone()),
            uptime_seconds: self.started.elapsed().as_secs_f64(),
        }
    }
}

async fn generate_handler(State(state): State<Arc<ServiceState>>, body: Bytes) -> std::result::Result<Json<GenerateResponse>, ServiceError> {
    let model = state.model().ok_or(ServiceError::NoModelLoaded)?;
    let request: GenerateRequest =
        serde_json::from_slice(&body).map_err(|e| Error::ParseError(format!("request body: {e}")))?;
    let max_batch = state.max_batch;
    tokio::task::spawn_blocking(move || generate(&model, &request, max_batch))
        .await
        .map_err(|e| Error::Io(std::io::Error::other(format!("worker failed: {e}"))))?
        .map(Json)
}

async fn categories_handler(State(state): State<Arc<ServiceState>>) -> std::result::Result<Json<Vec<String>>, ServiceError> {
    let model = state.model().ok_or(ServiceError::NoModelLoaded)?;
    Ok(Json(model.vocabulary.names().to_vec()))
}

async fn health_handler(State(state): State<Arc<ServiceState>>) -> Json<HealthResponse> {
    Json(state.health())
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/generate", post(generate_handler))
        .route("/categories", get(categories_handler))
        .route("/health", get(health_handler))
        .with_state(state)
}

/// Serves until the listener fails or ctrl-c is received.
pub async fn serve(listener: TcpListener, state: Arc<ServiceState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
