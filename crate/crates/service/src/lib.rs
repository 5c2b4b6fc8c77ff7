//! HTTP facade over an immutable dataset snapshot.
//!
//! All endpoints live under `/v1` and speak JSON. Errors use the envelope
//! `{code, message}` (see [`ApiError`]). Pair sweeps and studies are not
//! computed here; the CLI writes their artifacts and `/v1/studies/{id}`
//! serves them.

mod error;
mod routes;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::http::Method;
use axum::Router;
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;
use uiot_core::retrieval::LabelEmbeddingSet;
use uiot_core::store::encoder::{Encoder, Preprocess};
use uiot_core::{Dataset, OtCache, SolverConfig};

pub use error::{status_for, ApiError, ErrorBody};

/// One ingested dataset together with the OT results computed over it.
pub struct Snapshot {
    pub dataset: Dataset,
    pub fingerprint: String,
    pub cache: OtCache,
}

impl Snapshot {
    pub fn new(dataset: Dataset) -> Self {
        Snapshot {
            fingerprint: dataset.fingerprint(),
            dataset,
            cache: OtCache::new(),
        }
    }
}

pub struct AppState {
    snapshot: RwLock<Arc<Snapshot>>,
    solver: SolverConfig,
    labels: BTreeMap<String, LabelEmbeddingSet>,
    artifacts: Option<PathBuf>,
    encoder: Option<Mutex<Box<dyn Encoder>>>,
    preprocess: Preprocess,
}

impl AppState {
    pub fn new(dataset: Dataset) -> Self {
        AppState {
            snapshot: RwLock::new(Arc::new(Snapshot::new(dataset))),
            solver: SolverConfig::default(),
            labels: BTreeMap::new(),
            artifacts: None,
            encoder: None,
            preprocess: Preprocess::default(),
        }
    }

    pub fn with_solver(mut self, solver: SolverConfig) -> Self {
        self.solver = solver;
        self
    }

    /// Registers a label set under `id` (by convention the sidecar file stem).
    pub fn with_labels(mut self, id: impl Into<String>, labels: LabelEmbeddingSet) -> Self {
        self.labels.insert(id.into(), labels);
        self
    }

    /// Directory holding `<studyId>.json` study summaries.
    pub fn with_artifacts(mut self, dir: impl Into<PathBuf>) -> Self {
        self.artifacts = Some(dir.into());
        self
    }

    pub fn with_encoder(mut self, encoder: Box<dyn Encoder>, preprocess: Preprocess) -> Self {
        self.encoder = Some(Mutex::new(encoder));
        self.preprocess = preprocess;
        self
    }

    /// The snapshot current at the time of the call. Requests hold on to it
    /// for their whole lifetime, so a concurrent swap never mixes datasets.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot
            .read()
            .expect("snapshot lock poisoned")
            .clone()
    }

    /// Atomically replaces the dataset; in-flight requests finish on the old one.
    pub fn swap_dataset(&self, dataset: Dataset) {
        *self.snapshot.write().expect("snapshot lock poisoned") = Arc::new(Snapshot::new(dataset));
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any);
    routes::api().with_state(state).layer(cors)
}

/// The API plus a static bundle served for every other path.
pub fn router_with_static(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    match static_dir {
        Some(dir) => router(state).fallback_service(ServeDir::new(dir)),
        None => router(state),
    }
}

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
