//! HTTP render service over one immutable checkpoint.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use confies_core::field::{CheckpointMeta, QueryMode, SceneField};
use confies_core::render::{render_image, CameraModel, RenderOptions};
use log::{error, info};
use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

use crate::camera::CameraDefaults;

pub const DEFAULT_MAX_DIM: usize = 512;
pub const DEFAULT_WORKERS: usize = 4;
pub const PREVIEW_SAMPLES: usize = 16;
pub const PREVIEW_DIVISOR: usize = 4;

pub struct ServiceState {
    pub field: SceneField<f32>,
    pub meta: CheckpointMeta,
    pub defaults: CameraDefaults,
    pub max_dim: usize,
    pub samples: usize,
    /// One permit per concurrent render; requests beyond it get 429.
    pub permits: Arc<Semaphore>,
    pub requests: AtomicU64,
    pub renders: AtomicU64,
    pub rejected: AtomicU64,
}

impl ServiceState {
    pub fn new(field: SceneField<f32>, meta: CheckpointMeta, max_dim: usize, workers: usize) -> confies_core::Result<Self> {
        let defaults = CameraDefaults::from_meta(&meta)?;
        Ok(Self {
            field,
            meta,
            defaults,
            max_dim,
            samples: RenderOptions::default().samples,
            permits: Arc::new(Semaphore::new(workers.max(1))),
            requests: AtomicU64::new(0),
            renders: AtomicU64::new(0),
            rejected: AtomicU64::new(0),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    #[default]
    Color,
    Mask,
    Depth,
}

/// Either one value per attribute in order (missing trailing values are 0)
/// or a map from attribute name to value (missing names are 0).
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Attributes {
    List(Vec<f64>),
    Named(std::collections::BTreeMap<String, f64>),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CameraRequest {
    Orbit {
        azimuth: Option<f64>,
        elevation: Option<f64>,
        radius: Option<f64>,
    },
    Explicit {
        intrinsics: [[f64; 3]; 3],
        world_from_camera: [[f64; 4]; 4],
        near: Option<f64>,
        far: Option<f64>,
    },
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    pub attributes: Option<Attributes>,
    pub camera: Option<CameraRequest>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    #[serde(default)]
    pub layer: Layer,
    #[serde(default)]
    pub preview: bool,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostic_id: Option<String>,
}

fn failure(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into(), diagnostic_id: None })).into_response()
}

fn internal(message: String) -> Response {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    let id = format!("{:x}", nanos);
    error!("render failed [{id}]: {message}");
    (
        StatusCode::INTERNAL_SERVER_ERROR,
        Json(ErrorBody { error: "render failed".into(), diagnostic_id: Some(id) }),
    )
        .into_response()
}

/// Validated request: control vector, camera, quality.
struct Job {
    alpha: Vec<f64>,
    clamped: bool,
    camera: CameraModel,
    samples: usize,
    layer: Layer,
}

fn plan(state: &ServiceState, req: RenderRequest) -> Result<Job, Response> {
    let names = &state.meta.attribute_names;
    let k = names.len();
    let mut alpha = vec![0.0; k];
    match req.attributes {
        None => {}
        Some(Attributes::List(values)) => {
            if values.len() > k {
                return Err(failure(StatusCode::BAD_REQUEST, format!("{} attributes given, model has {k}", values.len())));
            }
            alpha[..values.len()].copy_from_slice(&values);
        }
        Some(Attributes::Named(map)) => {
            for (name, v) in map {
                let a = names
                    .iter()
                    .position(|n| *n == name)
                    .ok_or_else(|| failure(StatusCode::BAD_REQUEST, format!("unknown attribute `{name}`")))?;
                alpha[a] = v;
            }
        }
    }
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(failure(StatusCode::BAD_REQUEST, "attribute values must be finite"));
    }
    let clamped = alpha.iter().any(|v| v.abs() > 1.0);
    alpha.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));

    let d = &state.defaults;
    let (width, height) = (req.width.unwrap_or(d.width), req.height.unwrap_or(d.height));
    if width == 0 || height == 0 {
        return Err(failure(StatusCode::BAD_REQUEST, "image dimensions must be positive"));
    }
    if width > state.max_dim || height > state.max_dim {
        return Err(failure(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("{width}x{height} exceeds the {0}x{0} limit", state.max_dim),
        ));
    }
    let camera = match req.camera {
        None => d.orbit(None, None, None, width, height),
        Some(CameraRequest::Orbit { azimuth, elevation, radius }) => d.orbit(azimuth, elevation, radius, width, height),
        Some(CameraRequest::Explicit { intrinsics, world_from_camera, near, far }) => CameraModel::new(
            Matrix3::from_fn(|r, c| intrinsics[r][c]),
            Matrix4::from_fn(|r, c| world_from_camera[r][c]),
            width,
            height,
            near.unwrap_or(d.near),
            far.unwrap_or(d.far),
        ),
    }
    .map_err(|e| failure(StatusCode::BAD_REQUEST, e.to_string()))?;
    let (camera, samples) = if req.preview {
        let w = (width / PREVIEW_DIVISOR).max(1);
        let h = (height / PREVIEW_DIVISOR).max(1);
        (camera.resized(w, h), PREVIEW_SAMPLES)
    } else {
        (camera, state.samples)
    };
    Ok(Job { alpha, clamped, camera, samples, layer: req.layer })
}

fn execute(state: &ServiceState, job: &Job) -> confies_core::Result<(Vec<u8>, Option<(f32, f32)>)> {
    let options = RenderOptions { samples: job.samples, ..RenderOptions::default() };
    let img = render_image(&state.field, &job.camera, &QueryMode::Control { alpha: job.alpha.clone() }, &options)?;
    Ok(match job.layer {
        Layer::Color => (img.color_png([0.0; 3])?, None),
        Layer::Mask => (img.mask_png()?, None),
        Layer::Depth => {
            let (png, range) = img.depth_png()?;
            (png, Some((range.min, range.max)))
        }
    })
}

async fn render(State(state): State<Arc<ServiceState>>, body: Bytes) -> Response {
    state.requests.fetch_add(1, Ordering::Relaxed);
    let req: RenderRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return failure(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    let job = match plan(&state, req) {
        Ok(j) => j,
        Err(r) => return r,
    };
    let Ok(permit) = state.permits.clone().try_acquire_owned() else {
        state.rejected.fetch_add(1, Ordering::Relaxed);
        return failure(StatusCode::TOO_MANY_REQUESTS, "render queue is full");
    };
    let worker = state.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        let _permit = permit;
        execute(&worker, &job).map(|r| (r, job.clamped))
    })
    .await;
    match outcome {
        Ok(Ok(((png, depth), clamped))) => {
            state.renders.fetch_add(1, Ordering::Relaxed);
            let mut response = (StatusCode::OK, png).into_response();
            let headers = response.headers_mut();
            headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
            headers.insert("clamped", HeaderValue::from_static(if clamped { "true" } else { "false" }));
            if let Some((lo, hi)) = depth {
                headers.insert("depth-min", HeaderValue::from_str(&lo.to_string()).expect("ascii"));
                headers.insert("depth-max", HeaderValue::from_str(&hi.to_string()).expect("ascii"));
            }
            response
        }
        Ok(Err(e)) => internal(e.to_string()),
        Err(e) => internal(format!("render task aborted: {e}")),
    }
}

async fn meta(State(state): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    let m = &state.meta;
    Json(json!({
        "K": m.attribute_names.len(),
        "N": m.config.topology.region_count,
        "names": m.attribute_names,
        "regions": m.config.topology.attribute_region,
        "dims": { "width": state.defaults.width, "height": state.defaults.height },
        "camera": state.defaults,
        "max_dim": state.max_dim,
        "preview": { "divisor": PREVIEW_DIVISOR, "samples": PREVIEW_SAMPLES },
        "step": m.step,
    }))
}

async fn healthz(State(state): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "requests": state.requests.load(Ordering::Relaxed),
        "renders": state.renders.load(Ordering::Relaxed),
        "rejected": state.rejected.load(Ordering::Relaxed),
    }))
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/meta", get(meta))
        .route("/render", post(render))
        .route("/healthz", get(healthz))
        .with_state(state)
}

pub async fn serve(state: Arc<ServiceState>, bind: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    info!("serving on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
