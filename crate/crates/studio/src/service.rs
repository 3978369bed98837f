//! Local HTTP API over one bundle.
//!
//! | route              | body / query     | reply                       |
//! |--------------------|------------------|-----------------------------|
//! | `GET /health`      |                  | `{"status":"ok"}`           |
//! | `GET /view`        | `?hier=u`        | view document               |
//! | `GET /script`      |                  | current script              |
//! | `POST /ops`        | one op           | new hash, resolved op, view |
//! | `DELETE /ops/last` |                  | hash after undo             |
//! | `POST /render`     | render spec      | `audio/wav` bytes           |
//!
//! Invalid ops and specs get 422. Renders are cached by model hash and spec.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use nae_core::{extract, hierarchical_select, ManipulationOp, ManipulationScript, ModelHash, NaeModel, RenderSpec};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::bundle::Bundle;
use crate::error::{Result, StudioError};
use crate::render::render_spec_audio;
use crate::view::{build_view, ViewDocument, DEFAULT_FRAME_CAP};
use crate::wav::encode_wav;

pub struct Session {
    bundle: Bundle,
    state: RwLock<EditState>,
    cache: Mutex<HashMap<(ModelHash, String), Arc<Vec<u8>>>>,
}

struct EditState {
    script: ManipulationScript,
    /// The loaded model followed by the result of each op.
    models: Vec<Arc<NaeModel>>,
}

impl EditState {
    fn current(&self) -> Arc<NaeModel> {
        self.models.last().expect("base model").clone()
    }
}

impl Session {
    pub fn new(bundle: Bundle) -> Arc<Self> {
        let base = Arc::new(bundle.model.clone());
        let script = ManipulationScript::new(&base);
        Arc::new(Self {
            bundle,
            state: RwLock::new(EditState { script, models: vec![base] }),
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn current_model(&self) -> Arc<NaeModel> {
        self.state.read().expect("state lock").current()
    }

    pub fn script(&self) -> ManipulationScript {
        self.state.read().expect("state lock").script.clone()
    }

    pub fn view(&self, model: &NaeModel, hier: Option<usize>) -> std::result::Result<ViewDocument, nae_core::Error> {
        let mut set = extract(model, &self.bundle.spectrogram.magnitudes)?;
        if let Some(u) = hier {
            set = hierarchical_select(&set, u)?;
        }
        Ok(build_view(&set, self.bundle.provenance_for(model), DEFAULT_FRAME_CAP))
    }

    /// Applies `op` to the current model and appends it to the script.
    /// Returns the new model, the op as recorded, and the script length.
    pub fn apply(&self, op: &ManipulationOp) -> std::result::Result<(Arc<NaeModel>, ManipulationOp, usize), nae_core::Error> {
        let mut state = self.state.write().expect("state lock");
        let current = state.current();
        let next = Arc::new(state.script.push(&current, op)?);
        state.models.push(next.clone());
        let resolved = state.script.ops.last().expect("just pushed").clone();
        let count = state.script.ops.len();
        drop(state);
        self.retain_cache(next.content_hash());
        Ok((next, resolved, count))
    }

    /// Drops the last op; `None` when the script is empty.
    pub fn undo(&self) -> Option<(ModelHash, usize)> {
        let mut state = self.state.write().expect("state lock");
        state.script.ops.pop()?;
        state.models.pop();
        let hash = state.current().content_hash();
        let count = state.script.ops.len();
        drop(state);
        self.retain_cache(hash);
        Some((hash, count))
    }

    fn retain_cache(&self, hash: ModelHash) {
        self.cache.lock().expect("cache lock").retain(|(h, _), _| *h == hash);
    }

    /// WAV bytes for `spec` on `model`, and whether they came from the cache.
    pub fn render(&self, model: &NaeModel, spec: &RenderSpec) -> Result<(Arc<Vec<u8>>, bool)> {
        let key = (model.content_hash(), serde_json::to_string(spec).expect("spec serialises"));
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok((hit.clone(), true));
        }
        let set = extract(model, &self.bundle.spectrogram.magnitudes)?;
        let audio = render_spec_audio(&set, &self.bundle.spectrogram, spec)?;
        let bytes = Arc::new(encode_wav(&audio, self.bundle.stft().sample_rate));
        let mut cache = self.cache.lock().expect("cache lock");
        let stored = cache.entry(key).or_insert(bytes);
        Ok((stored.clone(), false))
    }
}

#[derive(Debug)]
struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<nae_core::Error> for ApiError {
    fn from(e: nae_core::Error) -> Self {
        let status = match e {
            nae_core::Error::Numeric(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self(status, e.to_string())
    }
}

impl From<StudioError> for ApiError {
    fn from(e: StudioError) -> Self {
        match e {
            StudioError::Core(c) => c.into(),
            other => Self(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

#[derive(Debug, Deserialize)]
struct ViewQuery {
    hier: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpReply {
    pub model_hash: ModelHash,
    pub op_count: usize,
    pub op: ManipulationOp,
    pub view: ViewDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UndoReply {
    pub model_hash: ModelHash,
    pub op_count: usize,
}

pub fn router(session: Arc<Session>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/view", get(view))
        .route("/script", get(script))
        .route("/ops", post(post_op))
        .route("/ops/last", delete(undo))
        .route("/render", post(render))
        .with_state(session)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn view(State(s): State<Arc<Session>>, Query(q): Query<ViewQuery>) -> ApiResult<Json<ViewDocument>> {
    let model = s.current_model();
    Ok(Json(tokio::task::spawn_blocking(move || s.view(&model, q.hier)).await.expect("view task")?))
}

async fn script(State(s): State<Arc<Session>>) -> Json<ManipulationScript> {
    Json(s.script())
}

async fn post_op(State(s): State<Arc<Session>>, Json(op): Json<ManipulationOp>) -> ApiResult<Json<OpReply>> {
    let reply = tokio::task::spawn_blocking(move || -> ApiResult<OpReply> {
        let (model, op, op_count) = s.apply(&op)?;
        Ok(OpReply { model_hash: model.content_hash(), op_count, op, view: s.view(&model, None)? })
    })
    .await
    .expect("op task")?;
    Ok(Json(reply))
}

async fn undo(State(s): State<Arc<Session>>) -> ApiResult<Json<UndoReply>> {
    match s.undo() {
        Some((model_hash, op_count)) => Ok(Json(UndoReply { model_hash, op_count })),
        None => Err(ApiError(StatusCode::CONFLICT, "no ops to undo".into())),
    }
}

async fn render(State(s): State<Arc<Session>>, Json(spec): Json<RenderSpec>) -> ApiResult<Response> {
    let model = s.current_model();
    let hash = model.content_hash();
    let (bytes, hit) = tokio::task::spawn_blocking(move || s.render(&model, &spec)).await.expect("render task")?;
    Ok((
        [
            (header::CONTENT_TYPE, "audio/wav".to_string()),
            (header::HeaderName::from_static("x-model-hash"), hash.to_hex()),
            (header::HeaderName::from_static("x-cache"), if hit { "hit" } else { "miss" }.to_string()),
        ],
        bytes.as_ref().clone(),
    )
        .into_response())
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener> {
    TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse | std::io::ErrorKind::PermissionDenied => {
            StudioError::PortBusy { port: addr.port(), source: e }
        }
        _ => StudioError::io(addr.to_string(), e),
    })
}

/// Serves until interrupted.
pub async fn serve(session: Arc<Session>, listener: TcpListener) -> Result<()> {
    let addr = listener.local_addr().ok();
    axum::serve(listener, router(session))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| StudioError::io(addr.map(|a| a.to_string()).unwrap_or_default(), e))
}
