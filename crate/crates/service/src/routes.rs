use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, FromRequestParts, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use uiot_core::geometry::normalize_with_dim;
use uiot_core::ot::{plan_to_json, SparseEntry};
use uiot_core::retrieval::{classify, nearest_screenshots, rank_apps, LabelScore, RetrievalResult};
use uiot_core::store::encoder::{encode_images, Preprocess};
use uiot_core::store::{Platform, Screenshot};
use uiot_core::uniformity::{
    app_uniformity, delta_uniformity, DeltaReport, UniformityReport, WhatIfEdit, DEFAULT_T,
};
use uiot_core::{EmbeddingVector, Error, Execution, SolverMode};

use crate::{ApiError, AppState, Snapshot};

type Shared = State<Arc<AppState>>;
type ApiResult<T> = Result<axum::Json<T>, ApiError>;

#[derive(FromRequest)]
#[from_request(via(axum::Json), rejection(ApiError))]
struct Json<T>(T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Query), rejection(ApiError))]
struct Query<T>(T);

#[derive(FromRequestParts)]
#[from_request(via(axum::extract::Path), rejection(ApiError))]
struct PathParam<T>(T);

pub(crate) fn api() -> Router<Arc<AppState>> {
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/apps", get(list_apps))
        .route("/v1/apps/{id}", get(get_app))
        .route("/v1/retrieve/app", post(retrieve_app))
        .route("/v1/retrieve/screenshot", post(retrieve_screenshot))
        .route("/v1/plan", get(plan))
        .route("/v1/consistency/whatif", post(whatif))
        .route("/v1/classify", post(classify_screenshot))
        .route("/v1/studies/{study_id}", get(study))
        .route("/v1/encode", post(encode))
}

/// Runs CPU-bound work off the async workers.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Health {
    status: &'static str,
    version: &'static str,
    build: &'static str,
    dataset_fingerprint: String,
    apps: usize,
    screenshots: usize,
    embedding_dim: usize,
    label_sets: Vec<String>,
    encoder: bool,
}

async fn healthz(State(state): Shared) -> ApiResult<Health> {
    let snap = state.snapshot();
    Ok(axum::Json(Health {
        status: "ok",
        version: env!("CARGO_PKG_VERSION"),
        build: option_env!("UIOT_BUILD").unwrap_or("dev"),
        dataset_fingerprint: snap.fingerprint.clone(),
        apps: snap.dataset.len(),
        screenshots: snap.dataset.screenshot_count(),
        embedding_dim: snap.dataset.embedding_dim(),
        label_sets: state.labels.keys().cloned().collect(),
        encoder: state.encoder.is_some(),
    }))
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct AppDescriptor {
    id: String,
    name: String,
    platform: Platform,
    category: String,
    /// ISO-8601
    snapshot_date: String,
    screenshot_count: usize,
}

impl AppDescriptor {
    fn of(app: &uiot_core::ScreenSet) -> Self {
        AppDescriptor {
            id: app.id.clone(),
            name: app.name.clone(),
            platform: app.platform,
            category: app.category.clone(),
            snapshot_date: app.snapshot_date.format("%Y-%m-%d").to_string(),
            screenshot_count: app.len(),
        }
    }
}

async fn list_apps(State(state): Shared) -> ApiResult<Vec<AppDescriptor>> {
    let snap = state.snapshot();
    Ok(axum::Json(
        snap.dataset.apps().iter().map(AppDescriptor::of).collect(),
    ))
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct AppDetail {
    #[serde(flatten)]
    descriptor: AppDescriptor,
    screenshots: Vec<Screenshot>,
    uniformity: UniformityReport,
}

async fn get_app(State(state): Shared, PathParam(id): PathParam<String>) -> ApiResult<AppDetail> {
    let snap = state.snapshot();
    let app = snap.dataset.app(&id)?;
    Ok(axum::Json(AppDetail {
        descriptor: AppDescriptor::of(app),
        screenshots: app.screenshots.clone(),
        uniformity: app_uniformity(app, DEFAULT_T)?,
    }))
}

fn default_k() -> usize {
    10
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RetrieveAppRequest {
    query_app_id: String,
    #[serde(default = "default_k")]
    k: usize,
    solver: Option<String>,
}

async fn retrieve_app(
    State(state): Shared,
    Json(req): Json<RetrieveAppRequest>,
) -> ApiResult<RetrievalResult> {
    let mut config = state.solver.clone();
    if let Some(s) = &req.solver {
        config.mode = s.parse::<SolverMode>()?;
    }
    let snap = state.snapshot();
    let result = blocking(move || {
        let Snapshot { dataset, cache, .. } = &*snap;
        let query = dataset.app(&req.query_app_id)?;
        Ok(rank_apps(query, dataset, req.k, &config, cache, Execution::default())?.result)
    })
    .await?;
    Ok(axum::Json(result))
}

/// Either a raw vector or the id of a stored screenshot.
#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct QueryVector {
    vector: Option<Vec<f64>>,
    screenshot_id: Option<String>,
}

impl QueryVector {
    /// `(query id, unit vector, id to exclude from results)`
    fn resolve(
        self,
        snap: &Snapshot,
    ) -> Result<(String, EmbeddingVector, Option<String>), ApiError> {
        match (self.vector, self.screenshot_id) {
            (Some(v), None) => Ok((
                "vector".to_owned(),
                normalize_with_dim(&v, snap.dataset.embedding_dim())?,
                None,
            )),
            (None, Some(id)) => {
                let v = snap.dataset.screenshot_vector(&id)?;
                Ok((id.clone(), v, Some(id)))
            }
            _ => Err(ApiError::bad_request(
                "exactly one of `vector` and `screenshotId` is required",
            )),
        }
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RetrieveScreenshotRequest {
    vector: Option<Vec<f64>>,
    screenshot_id: Option<String>,
    #[serde(default = "default_k")]
    k: usize,
}

async fn retrieve_screenshot(
    State(state): Shared,
    Json(req): Json<RetrieveScreenshotRequest>,
) -> ApiResult<RetrievalResult> {
    let snap = state.snapshot();
    let result = blocking(move || {
        let q = QueryVector {
            vector: req.vector,
            screenshot_id: req.screenshot_id,
        };
        let (id, v, exclude) = q.resolve(&snap)?;
        Ok(nearest_screenshots(
            &id,
            &v,
            &snap.dataset,
            req.k,
            exclude.as_deref(),
        )?)
    })
    .await?;
    Ok(axum::Json(result))
}

fn default_top_pairs() -> usize {
    20
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct PlanQuery {
    query: String,
    target: String,
    #[serde(default = "default_top_pairs")]
    top_pairs: usize,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct MatchedPair {
    row: usize,
    col: usize,
    query_screenshot_id: String,
    target_screenshot_id: String,
    mass: f64,
    cost: f64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct PlanResponse {
    query_id: String,
    target_id: String,
    distance: f64,
    solver: &'static str,
    iterations: usize,
    converged: bool,
    n_a: usize,
    n_b: usize,
    plan: Vec<SparseEntry>,
    top_pairs: Vec<MatchedPair>,
}

async fn plan(State(state): Shared, Query(q): Query<PlanQuery>) -> ApiResult<PlanResponse> {
    let snap = state.snapshot();
    let config = state.solver.clone();
    let response = blocking(move || {
        let a = snap.dataset.app(&q.query)?;
        let b = snap.dataset.app(&q.target)?;
        let r = snap.cache.get_or_compute(a, b, &config)?;
        let json = plan_to_json(&r);
        let top_pairs = r
            .plan
            .top_pairs(1e-12, q.top_pairs)
            .into_iter()
            .map(|(i, j, mass)| MatchedPair {
                row: i,
                col: j,
                query_screenshot_id: a.screenshots[i].id.clone(),
                target_screenshot_id: b.screenshots[j].id.clone(),
                mass,
                cost: r.cost.get(i, j),
            })
            .collect();
        Ok(PlanResponse {
            query_id: a.id.clone(),
            target_id: b.id.clone(),
            distance: r.distance,
            solver: r.solver.as_str(),
            iterations: r.iterations,
            converged: r.converged,
            n_a: json.n_a,
            n_b: json.n_b,
            plan: json.plan,
            top_pairs,
        })
    })
    .await?;
    Ok(axum::Json(response))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct WhatIfRequest {
    app_id: String,
    #[serde(default)]
    remove_ids: Vec<String>,
    #[serde(default)]
    add_vectors: Vec<Vec<f64>>,
    /// Stored screenshots (from any app) whose vectors are added.
    #[serde(default)]
    add_held_out_ids: Vec<String>,
    t: Option<f64>,
}

async fn whatif(State(state): Shared, Json(req): Json<WhatIfRequest>) -> ApiResult<DeltaReport> {
    let snap = state.snapshot();
    let report = blocking(move || {
        let base = snap.dataset.app(&req.app_id)?;
        let dim = snap.dataset.embedding_dim();
        let mut add_vectors = req
            .add_vectors
            .iter()
            .map(|v| normalize_with_dim(v, dim))
            .collect::<Result<Vec<_>, Error>>()?;
        for id in &req.add_held_out_ids {
            add_vectors.push(snap.dataset.screenshot_vector(id)?);
        }
        let edit = WhatIfEdit {
            remove_ids: req.remove_ids,
            add_vectors,
        };
        Ok(delta_uniformity(base, &edit, req.t.unwrap_or(DEFAULT_T))?)
    })
    .await?;
    Ok(axum::Json(report))
}

fn default_label_k() -> usize {
    5
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ClassifyRequest {
    vector: Option<Vec<f64>>,
    screenshot_id: Option<String>,
    label_set_id: String,
    #[serde(default = "default_label_k")]
    k: usize,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ClassifyResponse {
    query_id: String,
    label_set_id: String,
    labels: Vec<LabelScore>,
}

async fn classify_screenshot(
    State(state): Shared,
    Json(req): Json<ClassifyRequest>,
) -> ApiResult<ClassifyResponse> {
    let labels = state
        .labels
        .get(&req.label_set_id)
        .ok_or_else(|| Error::UnknownLabelSet(req.label_set_id.clone()))?;
    let snap = state.snapshot();
    let (query_id, v, _) = QueryVector {
        vector: req.vector,
        screenshot_id: req.screenshot_id,
    }
    .resolve(&snap)?;
    Ok(axum::Json(ClassifyResponse {
        query_id,
        label_set_id: req.label_set_id,
        labels: classify(&v, labels, req.k)?,
    }))
}

fn valid_study_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

async fn study(
    State(state): Shared,
    PathParam(study_id): PathParam<String>,
) -> Result<axum::Json<serde_json::Value>, ApiError> {
    if !valid_study_id(&study_id) {
        return Err(ApiError::bad_request(format!(
            "invalid study id `{study_id}`"
        )));
    }
    let missing = || ApiError::not_found("UnknownStudyId", format!("no study `{study_id}`"));
    let dir = state.artifacts.as_ref().ok_or_else(missing)?;
    let path = dir.join(format!("{study_id}.json"));
    let text = match tokio::fs::read_to_string(&path).await {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(missing()),
        Err(e) => return Err(Error::Io(e).into()),
    };
    let value = serde_json::from_str(&text)
        .map_err(|e| ApiError::internal(format!("study `{study_id}` is not valid JSON: {e}")))?;
    Ok(axum::Json(value))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct EncodeQuery {
    pad_square: Option<bool>,
}

#[derive(Serialize)]
struct EncodeResponse {
    vector: EmbeddingVector,
}

/// Encodes raw image bytes with the configured encoder; the vector comes
/// back normalized, ready for what-if `addVectors`.
async fn encode(
    State(state): Shared,
    Query(q): Query<EncodeQuery>,
    body: Bytes,
) -> ApiResult<EncodeResponse> {
    if state.encoder.is_none() {
        return Err(Error::EncoderUnavailable("no encoder configured".into()).into());
    }
    if body.is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "UnsupportedImageFormat",
            "empty request body",
        ));
    }
    let dim = state.snapshot().dataset.embedding_dim();
    let vector = blocking(move || {
        let mut file = tempfile::NamedTempFile::new().map_err(Error::Io)?;
        std::io::Write::write_all(&mut file, &body).map_err(Error::Io)?;
        let preprocess = Preprocess {
            pad_square: q.pad_square.unwrap_or(state.preprocess.pad_square),
            ..state.preprocess
        };
        let mut encoder = state
            .encoder
            .as_ref()
            .expect("checked above")
            .lock()
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let block = encode_images(&[file.path().to_owned()], &mut **encoder, dim, preprocess)?;
        let row: Vec<f64> = block.row(0).iter().map(|&x| f64::from(x)).collect();
        Ok(normalize_with_dim(&row, dim)?)
    })
    .await?;
    Ok(axum::Json(EncodeResponse { vector }))
}
