//! HTTP service over the cue-discovery pipeline, backed by a persistent
//! content-addressed run store.
//!
//! Uploading a dataset schedules annotation as a background job on a
//! bounded pool; endpoints that need annotations answer 409 until it ends.

mod error;
pub mod store;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use icq_core::annotate::{Annotations, FeatureKind, FeatureSpec, ResourceBundle};
use icq_core::corpus::{strip_premises, Dataset, DatasetFiles, Split};
use icq_core::filter::SupportMode;
use icq_core::pipeline;
use icq_core::probe::{parse_predictions, CoverageMode, PredictionSet};
use icq_core::report::{to_json, ReportDir, RunConfig, RunManifest};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

pub use error::ApiError;
pub use store::{AnnotationStatus, DatasetDescriptor, DatasetEntry, Index, RunStore};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_STORE: &str = "icq-store";
pub const DEFAULT_MAX_UPLOAD: usize = 64 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("store {}: {source}", path.display())]
    Store {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] icq_core::Error),
    #[error("server: {0}")]
    Serve(std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub store_dir: PathBuf,
    pub bind: String,
    /// Per-file upload cap in bytes.
    pub max_upload: usize,
    pub seed: u64,
    pub resources_dir: Option<PathBuf>,
    /// Static frontend assets served at `/` when the directory exists.
    pub webui_dir: Option<PathBuf>,
    /// Concurrent annotation jobs.
    pub workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            store_dir: PathBuf::from(DEFAULT_STORE),
            bind: DEFAULT_BIND.to_string(),
            max_upload: DEFAULT_MAX_UPLOAD,
            seed: icq_core::probe::DEFAULT_SEED,
            resources_dir: None,
            webui_dir: None,
            workers: 2,
        }
    }
}

pub struct AppState {
    config: ServiceConfig,
    store: RunStore,
    resources: ResourceBundle,
    index: RwLock<Index>,
    datasets: RwLock<HashMap<String, Arc<Dataset>>>,
    annotations: RwLock<HashMap<String, Arc<Annotations>>>,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    pool: Arc<Semaphore>,
}

type Shared = Arc<AppState>;

impl AppState {
    /// Opens the store, rebuilds the index from its contents and resumes
    /// annotation for datasets that have none. Needs a Tokio runtime.
    pub fn open(config: ServiceConfig) -> Result<Shared, ServiceError> {
        let store_err = |source| ServiceError::Store {
            path: config.store_dir.clone(),
            source,
        };
        let store = RunStore::open(&config.store_dir).map_err(store_err)?;
        let index = store.scan().map_err(store_err)?;
        store.write_index(&index).map_err(store_err)?;
        let resources = icq_core::annotate::resources_from(config.resources_dir.as_ref())?;
        let pending: Vec<String> = index
            .datasets
            .values()
            .filter(|e| e.status == AnnotationStatus::Annotating)
            .map(|e| e.descriptor.id.clone())
            .collect();
        let state = Arc::new(AppState {
            pool: Arc::new(Semaphore::new(config.workers.max(1))),
            config,
            store,
            resources,
            index: RwLock::new(index),
            datasets: RwLock::new(HashMap::new()),
            annotations: RwLock::new(HashMap::new()),
            locks: Mutex::new(HashMap::new()),
        });
        for id in pending {
            match state.dataset(&id) {
                Ok((_, ds)) => schedule_annotation(state.clone(), id, ds),
                Err(e) => {
                    state.set_status(&id, AnnotationStatus::Failed, Some(e.message().to_string()))
                }
            }
        }
        Ok(state)
    }

    pub fn store(&self) -> &RunStore {
        &self.store
    }

    /// The annotation worker pool. Holding all of its permits pauses
    /// annotation.
    pub fn annotation_pool(&self) -> Arc<Semaphore> {
        self.pool.clone()
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn run_config(&self) -> RunConfig {
        RunConfig {
            seed: self.config.seed,
            ..RunConfig::default()
        }
    }

    fn lock_for(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|p| p.into_inner());
        locks.entry(id.to_string()).or_default().clone()
    }

    fn entry(&self, id: &str) -> Result<DatasetEntry, ApiError> {
        let index = self.index.read().unwrap_or_else(|p| p.into_inner());
        index
            .datasets
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown dataset {id}")))
    }

    fn update_index(&self, f: impl FnOnce(&mut Index)) {
        let snapshot = {
            let mut index = self.index.write().unwrap_or_else(|p| p.into_inner());
            f(&mut index);
            index.clone()
        };
        if let Err(e) = self.store.write_index(&snapshot) {
            tracing::error!("writing index: {e}");
        }
    }

    fn set_status(&self, id: &str, status: AnnotationStatus, error: Option<String>) {
        self.update_index(|index| {
            if let Some(e) = index.datasets.get_mut(id) {
                e.status = status;
                e.error = error;
            }
        });
    }

    fn dataset(&self, id: &str) -> Result<(DatasetEntry, Arc<Dataset>), ApiError> {
        let entry = self.entry(id)?;
        if let Some(ds) = self
            .datasets
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
        {
            return Ok((entry, ds.clone()));
        }
        let ds = Arc::new(
            self.store
                .load_dataset(&entry.descriptor)
                .map_err(ApiError::internal)?,
        );
        self.datasets
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id.to_string(), ds.clone());
        Ok((entry, ds))
    }

    fn annotations(&self, entry: &DatasetEntry) -> Result<Arc<Annotations>, ApiError> {
        let id = &entry.descriptor.id;
        match entry.status {
            AnnotationStatus::Annotating => {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "annotation still running",
                ))
            }
            AnnotationStatus::Failed => {
                return Err(ApiError::internal(format!(
                    "annotation failed: {}",
                    entry.error.as_deref().unwrap_or("unknown error")
                )))
            }
            AnnotationStatus::Ready => {}
        }
        if let Some(a) = self
            .annotations
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
        {
            return Ok(a.clone());
        }
        let a = Arc::new(self.store.load_annotations(id)?);
        self.annotations
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id.clone(), a.clone());
        Ok(a)
    }

    fn manifest(&self, entry: &DatasetEntry, config: RunConfig) -> RunManifest {
        RunManifest::new(
            &entry.descriptor.name,
            &entry.descriptor.hash,
            self.resources.content_hash(),
            config,
        )
    }

    fn predictions(
        &self,
        entry: &DatasetEntry,
        dataset: &Dataset,
        model: &str,
    ) -> Result<PredictionSet, ApiError> {
        if !entry.models.contains(model) {
            return Err(ApiError::not_found(format!("unknown model {model}")));
        }
        let path = self.store.predictions_path(&entry.descriptor.id, model);
        let text = std::fs::read_to_string(&path)?;
        parse_predictions(&text, Path::new(&format!("{model}.jsonl")), model, dataset)
            .map_err(|e| ApiError::from_core(e, StatusCode::UNPROCESSABLE_ENTITY))
    }
}

fn schedule_annotation(state: Shared, id: String, dataset: Arc<Dataset>) {
    tokio::spawn(async move {
        let _permit = match state.pool.clone().acquire_owned().await {
            Ok(p) => p,
            Err(_) => return,
        };
        let worker = state.clone();
        let job_id = id.clone();
        let result = tokio::task::spawn_blocking(move || {
            let ann = pipeline::annotate(&dataset, &worker.resources, &worker.run_config());
            worker.store.save_annotations(&job_id, &ann).map(|_| ann)
        })
        .await;
        match result {
            Ok(Ok(ann)) => {
                state
                    .annotations
                    .write()
                    .unwrap_or_else(|p| p.into_inner())
                    .insert(id.clone(), Arc::new(ann));
                state.set_status(&id, AnnotationStatus::Ready, None);
                tracing::info!(dataset = %id, "annotation finished");
            }
            Ok(Err(e)) => state.set_status(&id, AnnotationStatus::Failed, Some(e.to_string())),
            Err(e) => state.set_status(&id, AnnotationStatus::Failed, Some(e.to_string())),
        }
    });
}

fn json_document<T: Serialize>(status: StatusCode, value: &T) -> Response {
    (
        status,
        [(header::CONTENT_TYPE, "application/json")],
        to_json(value),
    )
        .into_response()
}

fn multipart_error(e: axum::extract::multipart::MultipartError) -> ApiError {
    ApiError::new(e.status(), e.body_text())
}

/// Reads every multipart field into memory, enforcing the per-file cap.
async fn read_fields(
    mut mp: Multipart,
    max: usize,
) -> Result<HashMap<String, (Option<String>, Vec<u8>)>, ApiError> {
    let mut fields = HashMap::new();
    while let Some(field) = mp.next_field().await.map_err(multipart_error)? {
        let name = field.name().unwrap_or_default().to_string();
        let file_name = field.file_name().map(str::to_string);
        let bytes = field.bytes().await.map_err(multipart_error)?;
        if bytes.len() > max {
            return Err(ApiError::new(
                StatusCode::PAYLOAD_TOO_LARGE,
                format!("field {name:?} exceeds the upload limit of {max} bytes"),
            ));
        }
        fields.insert(name, (file_name, bytes.to_vec()));
    }
    Ok(fields)
}

fn take_field(
    fields: &mut HashMap<String, (Option<String>, Vec<u8>)>,
    name: &str,
) -> Result<(Option<String>, Vec<u8>), ApiError> {
    fields
        .remove(name)
        .ok_or_else(|| ApiError::bad_request(format!("missing multipart field {name:?}")))
}

fn text_field(
    fields: &mut HashMap<String, (Option<String>, Vec<u8>)>,
    name: &str,
) -> Result<Option<String>, ApiError> {
    match fields.remove(name) {
        None => Ok(None),
        Some((_, bytes)) => String::from_utf8(bytes)
            .map(|s| Some(s.trim().to_string()))
            .map_err(|_| ApiError::bad_request(format!("field {name:?} is not UTF-8"))),
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok", "version": icq_core::TOOL_VERSION}))
}

async fn list_datasets(State(st): State<Shared>) -> Json<Vec<DatasetEntry>> {
    let index = st.index.read().unwrap_or_else(|p| p.into_inner());
    Json(index.datasets.values().cloned().collect())
}

async fn get_dataset(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<DatasetEntry>, ApiError> {
    st.entry(&id).map(Json)
}

async fn upload_dataset(State(st): State<Shared>, mp: Multipart) -> Result<Response, ApiError> {
    let mut fields = read_fields(mp, st.config.max_upload).await?;
    let files = DatasetFiles {
        train: take_field(&mut fields, "train")?.1,
        test: take_field(&mut fields, "test")?.1,
        meta: take_field(&mut fields, "meta")?.1,
    };
    let name = text_field(&mut fields, "name")?
        .filter(|n| !n.is_empty())
        .unwrap_or_else(|| "dataset".to_string());
    let hash = files.content_hash();
    let id = hash[..store::ID_LEN].to_string();

    let lock = st.lock_for(&id);
    let _guard = lock.lock().await;
    if let Ok(existing) = st.entry(&id) {
        return Ok(json_document(StatusCode::OK, &existing));
    }
    let worker = st.clone();
    let (entry, dataset) = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let dataset = files
            .parse(&name, Path::new(""))
            .map_err(|e| ApiError::from_core(e, StatusCode::BAD_REQUEST))?;
        let descriptor = DatasetDescriptor::new(&hash, &dataset);
        worker.store.save_dataset(&descriptor, &files)?;
        Ok((
            DatasetEntry {
                descriptor,
                status: AnnotationStatus::Annotating,
                error: None,
                models: Default::default(),
            },
            Arc::new(dataset),
        ))
    })
    .await
    .map_err(ApiError::internal)??;
    st.datasets
        .write()
        .unwrap_or_else(|p| p.into_inner())
        .insert(id.clone(), dataset.clone());
    let stored = entry.clone();
    st.update_index(|index| {
        index.datasets.insert(id.clone(), stored);
    });
    tracing::info!(dataset = %id, name = %entry.descriptor.name, "dataset uploaded");
    schedule_annotation(st.clone(), id, dataset);
    Ok(json_document(StatusCode::CREATED, &entry))
}

#[derive(Debug, Default, Deserialize)]
struct CuesQuery {
    kinds: Option<String>,
    top: Option<usize>,
    min_support: Option<usize>,
    support_mode: Option<String>,
    models: Option<String>,
}

fn comma_list(s: &Option<String>) -> Vec<&str> {
    s.as_deref()
        .map(|s| {
            s.split(',')
                .map(str::trim)
                .filter(|x| !x.is_empty())
                .collect()
        })
        .unwrap_or_default()
}

impl CuesQuery {
    fn config(&self, base: RunConfig) -> Result<RunConfig, ApiError> {
        let mut config = base;
        if let Some(top) = self.top {
            config.top_k = top;
        }
        if let Some(min) = self.min_support {
            config.min_support = min;
        }
        if let Some(mode) = &self.support_mode {
            config.support_mode = mode
                .parse::<SupportMode>()
                .map_err(|e| ApiError::bad_request(e.to_string()))?;
        }
        let mut kinds = Vec::new();
        for k in comma_list(&self.kinds) {
            let kind = k
                .parse::<FeatureKind>()
                .map_err(|e| ApiError::bad_request(e.to_string()))?;
            if !kinds.contains(&kind) {
                kinds.push(kind);
            }
        }
        config.kinds = kinds;
        Ok(config)
    }
}

async fn get_cues(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<CuesQuery>,
) -> Result<Response, ApiError> {
    let (entry, dataset) = st.dataset(&id)?;
    let annotations = st.annotations(&entry)?;
    let config = q.config(st.run_config())?;
    let mut models = Vec::new();
    for m in comma_list(&q.models) {
        models.push(st.predictions(&entry, &dataset, m)?);
    }
    let manifest = st.manifest(&entry, config);
    let table = tokio::task::spawn_blocking(move || {
        pipeline::cue_table(manifest, &dataset, &annotations, &models)
    })
    .await
    .map_err(ApiError::internal)?
    .map_err(|e| ApiError::from_core(e, StatusCode::UNPROCESSABLE_ENTITY))?;
    Ok(json_document(StatusCode::OK, &table))
}

#[derive(Debug, Serialize)]
struct FeatureSupport {
    feature: FeatureSpec,
    train_support: usize,
    test_support: usize,
}

/// Every qualifying feature with its supports, for feature pickers.
async fn get_features(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<CuesQuery>,
) -> Result<Json<Vec<FeatureSupport>>, ApiError> {
    let (entry, dataset) = st.dataset(&id)?;
    let annotations = st.annotations(&entry)?;
    let config = q.config(st.run_config())?;
    let splits = pipeline::qualified_splits(&dataset, &annotations, &config);
    Ok(Json(
        splits
            .into_iter()
            .map(|s| FeatureSupport {
                train_support: s.train_support(),
                test_support: s.test_support(),
                feature: s.feature,
            })
            .collect(),
    ))
}

fn valid_model_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name.len() <= 128
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

#[derive(Debug, Serialize)]
struct PredictionDescriptor {
    dataset_id: String,
    model: String,
    count: usize,
}

async fn upload_predictions(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
    mp: Multipart,
) -> Result<Response, ApiError> {
    let (entry, dataset) = st.dataset(&id)?;
    let mut fields = read_fields(mp, st.config.max_upload).await?;
    let model = text_field(&mut fields, "model_name")?
        .ok_or_else(|| ApiError::bad_request("missing multipart field \"model_name\""))?;
    if !valid_model_name(&model) {
        return Err(ApiError::bad_request(format!(
            "model name {model:?} must use letters, digits, '-', '_' or '.'"
        )));
    }
    let (file_name, bytes) = take_field(&mut fields, "file")?;
    let text = String::from_utf8(bytes).map_err(|_| {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "prediction file is not UTF-8",
        )
    })?;
    let origin = PathBuf::from(file_name.unwrap_or_else(|| "predictions.jsonl".into()));
    let preds = parse_predictions(&text, &origin, &model, &dataset)
        .and_then(|p| p.require_complete(&dataset).map(|_| p))
        .map_err(|e| ApiError::from_core(e, StatusCode::UNPROCESSABLE_ENTITY))?;

    let lock = st.lock_for(&id);
    let _guard = lock.lock().await;
    st.store.save_predictions(&id, &model, text.as_bytes())?;
    st.update_index(|index| {
        if let Some(e) = index.datasets.get_mut(&id) {
            e.models.insert(model.clone());
        }
    });
    tracing::info!(dataset = %entry.descriptor.id, model = %model, "predictions uploaded");
    Ok(json_document(
        StatusCode::CREATED,
        &PredictionDescriptor {
            dataset_id: id,
            model,
            count: preds.len(),
        },
    ))
}

async fn list_predictions(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Vec<String>>, ApiError> {
    Ok(Json(st.entry(&id)?.models.into_iter().collect()))
}

#[derive(Debug, Deserialize)]
struct ProbeRequest {
    model: String,
    feature: String,
    #[serde(default)]
    coverage: CoverageMode,
}

async fn run_probe(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<ProbeRequest>,
) -> Result<Response, ApiError> {
    let (entry, dataset) = st.dataset(&id)?;
    let feature: FeatureSpec = req
        .feature
        .parse()
        .map_err(|e: icq_core::Error| ApiError::bad_request(e.to_string()))?;
    let annotations = st.annotations(&entry)?;
    let preds = st.predictions(&entry, &dataset, &req.model)?;
    let manifest = st.manifest(&entry, st.run_config());
    let (doc, stress) = pipeline::probe_feature(
        manifest,
        &dataset,
        &annotations,
        &preds,
        &feature,
        req.coverage,
    )
    .map_err(|e| match e {
        icq_core::Error::FeatureNotQualified { .. } => ApiError::not_found(e.to_string()),
        other => ApiError::from_core(other, StatusCode::UNPROCESSABLE_ENTITY),
    })?;

    let lock = st.lock_for(&id);
    let _guard = lock.lock().await;
    let reports = ReportDir::new(st.store.report_dir(&doc.manifest.run_id()));
    reports
        .write_manifest(&doc.manifest)
        .and_then(|_| reports.write_probe(&doc))
        .and_then(|_| reports.write_stress(&req.model, &stress, &stress.to_jsonl(&dataset)))
        .map_err(ApiError::internal)?;
    Ok(json_document(StatusCode::OK, &doc))
}

async fn export_hypothesis_only(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    let (_, dataset) = st.dataset(&id)?;
    let body = strip_premises(&dataset, false).split_to_jsonl(Split::Test);
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

pub fn router(state: Shared) -> Router {
    // Three files per upload, plus headroom for multipart framing.
    let body_limit = state
        .config
        .max_upload
        .saturating_mul(3)
        .saturating_add(64 * 1024);
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/datasets", get(list_datasets).post(upload_dataset))
        .route("/api/datasets/{id}", get(get_dataset))
        .route("/api/datasets/{id}/cues", get(get_cues))
        .route("/api/datasets/{id}/features", get(get_features))
        .route(
            "/api/datasets/{id}/predictions",
            get(list_predictions).post(upload_predictions),
        )
        .route("/api/datasets/{id}/probe", post(run_probe))
        .route(
            "/api/datasets/{id}/export/hypothesis-only",
            get(export_hypothesis_only),
        )
        .layer(DefaultBodyLimit::max(body_limit));
    let api = match state.config.webui_dir.as_ref().filter(|d| d.is_dir()) {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    };
    api.with_state(state)
}

pub async fn bind(addr: &str) -> Result<TcpListener, ServiceError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: addr.to_string(),
            source,
        })
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: TcpListener,
    state: Shared,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    tracing::info!(?addr, store = %state.store.root().display(), "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(ServiceError::Serve)
}

/// Binds `config.bind`, opens the store and serves until `shutdown`.
pub async fn run(
    config: ServiceConfig,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let listener = bind(&config.bind).await?;
    let state = AppState::open(config)?;
    serve(listener, state, shutdown).await
}
