//! JSON API for the review UI, mounted under `/api/v1`.
//!
//! Reads go straight to the run store. The only write is `POST
//! /runs/{id}/refine`, which creates a child run and executes it in the
//! background; parents are never modified. Refinements execute one at a
//! time.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use critclust::gateway::live::sniff_mime;
use critclust::gateway::{Backend, Gateway, GatewayConfig};
use critclust::pipeline::{Pipeline, RunStore, Stage};
use critclust::prompts::TextCriterion;
use critclust::Digest;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{info, warn};

const DEFAULT_SAMPLES: usize = 8;
const DEFAULT_PAGE_SIZE: usize = 50;
const MAX_PAGE_SIZE: usize = 500;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            kind: kind.to_string(),
            message: message.into(),
        }
    }
}

impl From<critclust::Error> for ApiError {
    fn from(e: critclust::Error) -> Self {
        use critclust::Error as E;
        let status = match &e {
            E::RunNotFound(_) | E::UnknownImageId(_) | E::AttributeAbsent(_) => StatusCode::NOT_FOUND,
            E::Criterion(_) | E::InvalidArgument(_) | E::Parse { .. } | E::Json(_) | E::NoLabeledImages => {
                StatusCode::BAD_REQUEST
            }
            E::ParentIncomplete(_) | E::RunExists(_) | E::ConfigMismatch { .. } | E::StoreBusy(_) => {
                StatusCode::CONFLICT
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.kind(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"kind": self.kind, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// What a refine token was first used for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TokenRecord {
    parent_run_id: String,
    criterion: TextCriterion,
    run_id: String,
}

struct Inner {
    store: RunStore,
    backend: Option<Arc<dyn Backend>>,
    gateway: GatewayConfig,
    tokens: Mutex<BTreeMap<String, TokenRecord>>,
    exec: Mutex<()>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// `backend` is needed only for refinement. Refine tokens persist under
    /// `<store>/service/` so retries stay idempotent across restarts.
    pub fn new(store: RunStore, backend: Option<Arc<dyn Backend>>, gateway: GatewayConfig) -> anyhow::Result<Self> {
        let path = tokens_path(&store);
        let tokens = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(AppState(Arc::new(Inner {
            store,
            backend,
            gateway,
            tokens: Mutex::new(tokens),
            exec: Mutex::new(()),
        })))
    }

    pub fn store(&self) -> &RunStore {
        &self.0.store
    }
}

fn tokens_path(store: &RunStore) -> PathBuf {
    store.root().join("service").join("refine-tokens.json")
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(run_summary))
        .route("/runs/{id}/progress", get(progress))
        .route("/runs/{id}/lineage", get(lineage))
        .route("/runs/{id}/clusters", get(clusters))
        .route("/runs/{id}/clusters/{index}/images", get(cluster_images))
        .route("/runs/{id}/images/{image_id}", get(image))
        .route("/runs/{id}/eval", get(eval))
        .route("/runs/{id}/fairness", get(fairness))
        .route("/runs/{id}/refine", post(refine));
    Router::new().nest("/api/v1", api).with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!(addr = %listener.local_addr()?, "serving");
    eprintln!("listening on http://{}/api/v1", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

/// Store access off the async workers.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Inner) -> ApiResult<T> + Send + 'static,
{
    let inner = Arc::clone(&state.0);
    tokio::task::spawn_blocking(move || f(&inner))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn require_run(store: &RunStore, id: &str) -> ApiResult<()> {
    if store.exists(id) {
        Ok(())
    } else {
        Err(critclust::Error::RunNotFound(id.to_string()).into())
    }
}

fn require_done(store: &RunStore, id: &str) -> ApiResult<()> {
    let stage = store.state(id)?.stage;
    if stage == Stage::Done {
        Ok(())
    } else {
        Err(ApiError::new(
            StatusCode::CONFLICT,
            "run_incomplete",
            format!("run {id} is at stage {stage}; clusters are available once it is done"),
        ))
    }
}

async fn list_runs(State(st): State<AppState>) -> ApiResult<Json<Value>> {
    blocking(&st, |inner| {
        let mut runs = Vec::new();
        for id in inner.store.list_runs()? {
            match inner.store.summary(&id) {
                Ok(s) => runs.push(serde_json::to_value(s).map_err(critclust::Error::from)?),
                Err(e) => warn!(run = %id, error = %e, "skipping unreadable run"),
            }
        }
        Ok(Json(json!({"runs": runs})))
    })
    .await
}

async fn run_summary(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(&st, move |inner| {
        let s = inner.store.summary(&id)?;
        Ok(Json(serde_json::to_value(s).map_err(critclust::Error::from)?))
    })
    .await
}

async fn progress(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(&st, move |inner| {
        let p = inner.store.progress(&id)?;
        Ok(Json(serde_json::to_value(p).map_err(critclust::Error::from)?))
    })
    .await
}

async fn lineage(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(&st, move |inner| {
        let l = inner.store.lineage(&id)?;
        let children = inner.store.children(&id)?;
        Ok(Json(json!({
            "run_id": l.run_id,
            "parent_run_id": l.parent_run_id,
            "ancestors": l.ancestors,
            "children": children,
        })))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct SamplesQuery {
    samples: Option<usize>,
}

async fn clusters(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SamplesQuery>,
) -> ApiResult<Json<Value>> {
    let samples = q.samples.unwrap_or(DEFAULT_SAMPLES).min(MAX_PAGE_SIZE);
    blocking(&st, move |inner| {
        require_done(&inner.store, &id)?;
        let set = inner.store.clusters(&id)?;
        let mut members: Vec<Vec<String>> = vec![Vec::new(); set.len()];
        for a in inner.store.assignments(&id)? {
            if let Some(m) = members.get_mut(a.cluster_index) {
                m.push(a.image_id);
            }
        }
        let clusters: Vec<Value> = set
            .names()
            .iter()
            .zip(members)
            .enumerate()
            .map(|(index, (name, ids))| {
                json!({
                    "index": index,
                    "name": name,
                    "size": ids.len(),
                    "samples": ids.into_iter().take(samples).collect::<Vec<_>>(),
                })
            })
            .collect();
        Ok(Json(json!({"run_id": id, "clusters": clusters})))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    page: Option<usize>,
    page_size: Option<usize>,
}

async fn cluster_images(
    State(st): State<AppState>,
    Path((id, index)): Path<(String, usize)>,
    Query(q): Query<PageQuery>,
) -> ApiResult<Json<Value>> {
    let page = q.page.unwrap_or(0);
    let page_size = q.page_size.unwrap_or(DEFAULT_PAGE_SIZE).clamp(1, MAX_PAGE_SIZE);
    blocking(&st, move |inner| {
        require_done(&inner.store, &id)?;
        let set = inner.store.clusters(&id)?;
        let Some(name) = set.names().get(index).cloned() else {
            return Err(ApiError::new(
                StatusCode::NOT_FOUND,
                "unknown_cluster",
                format!("run {id} has {} clusters; no index {index}", set.len()),
            ));
        };
        let members: Vec<_> = inner
            .store
            .assignments(&id)?
            .into_iter()
            .filter(|a| a.cluster_index == index)
            .collect();
        let images: Vec<Value> = members
            .iter()
            .skip(page.saturating_mul(page_size))
            .take(page_size)
            .map(|a| {
                json!({
                    "image_id": a.image_id,
                    "match_kind": a.match_kind,
                    "raw_answer": a.raw_answer,
                    "failed": a.error.is_some(),
                    "url": format!("/api/v1/runs/{id}/images/{}", a.image_id),
                })
            })
            .collect();
        Ok(Json(json!({
            "run_id": id,
            "index": index,
            "name": name,
            "size": members.len(),
            "page": page,
            "page_size": page_size,
            "images": images,
        })))
    })
    .await
}

async fn image(
    State(st): State<AppState>,
    Path((id, image_id)): Path<(String, String)>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let if_none_match = headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    blocking(&st, move |inner| {
        require_run(&inner.store, &id)?;
        let manifest = inner.store.manifest(&id)?;
        let record = manifest
            .get(&image_id)
            .ok_or_else(|| critclust::Error::UnknownImageId(image_id.clone()))?;
        let etag = format!("\"{}\"", record.content_hash.to_hex());
        let matches = if_none_match
            .as_deref()
            .is_some_and(|v| v.split(',').map(str::trim).any(|t| t == "*" || t == etag || t == format!("W/{etag}")));
        if matches {
            return Ok((StatusCode::NOT_MODIFIED, [(header::ETAG, etag)]).into_response());
        }
        let bytes = record.read_bytes().map_err(|e| {
            ApiError::new(StatusCode::NOT_FOUND, "image_unavailable", e.to_string())
        })?;
        if Digest::of(&bytes) != record.content_hash {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "content_changed",
                format!("{} no longer matches its recorded content hash", record.path.display()),
            ));
        }
        Ok((
            [
                (header::CONTENT_TYPE, sniff_mime(&bytes).to_string()),
                (header::ETAG, etag),
                (header::CACHE_CONTROL, "private, max-age=3600".to_string()),
            ],
            Body::from(bytes),
        )
            .into_response())
    })
    .await
}

fn read_json(path: PathBuf, kind: &str, message: String) -> ApiResult<Json<Value>> {
    match fs::read(&path) {
        Ok(bytes) => Ok(Json(serde_json::from_slice(&bytes).map_err(critclust::Error::from)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(ApiError::new(StatusCode::NOT_FOUND, kind, message)),
        Err(e) => Err(critclust::Error::io(&path, e).into()),
    }
}

async fn eval(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(&st, move |inner| {
        require_run(&inner.store, &id)?;
        let path = inner.store.run_dir(&id).join("eval").join("eval.json");
        read_json(path, "not_evaluated", format!("run {id} has not been evaluated"))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct AttributeQuery {
    attribute: Option<String>,
}

async fn fairness(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<AttributeQuery>,
) -> ApiResult<Json<Value>> {
    blocking(&st, move |inner| {
        require_run(&inner.store, &id)?;
        let dir = inner.store.run_dir(&id).join("eval");
        match q.attribute {
            Some(attr) => {
                if attr.is_empty() || !attr.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
                    return Err(ApiError::new(
                        StatusCode::BAD_REQUEST,
                        "invalid_argument",
                        format!("attribute name {attr:?} is not allowed"),
                    ));
                }
                let path = dir.join(format!("fairness-{attr}.json"));
                read_json(path, "not_audited", format!("run {id} has no fairness audit for {attr:?}"))
            }
            None => {
                let mut attributes: Vec<String> = fs::read_dir(&dir)
                    .into_iter()
                    .flatten()
                    .flatten()
                    .filter_map(|e| {
                        let name = e.file_name().into_string().ok()?;
                        Some(name.strip_prefix("fairness-")?.strip_suffix(".json")?.to_string())
                    })
                    .collect();
                attributes.sort();
                Ok(Json(json!({"run_id": id, "attributes": attributes})))
            }
        }
    })
    .await
}

#[derive(Debug, Deserialize)]
struct RefineBody {
    request_token: String,
    criterion: Value,
    #[serde(default)]
    run_id: Option<String>,
}

async fn refine(State(st): State<AppState>, Path(parent): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: RefineBody = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.to_string()))?;
    if req.request_token.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", "request_token is empty"));
    }
    let criterion: TextCriterion = serde_json::from_value(req.criterion)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_criterion", e.to_string()))?;
    let Some(backend) = st.0.backend.clone() else {
        return Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "no_backend",
            "the service was started without a model backend",
        ));
    };
    let token = req.request_token;
    let run_id = req.run_id;
    let bk = Arc::clone(&backend);
    let (record, fresh) = blocking(&st, move |inner| {
        let mut tokens = inner.tokens.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(prev) = tokens.get(&token) {
            if prev.parent_run_id == parent && prev.criterion == criterion {
                return Ok((prev.clone(), false));
            }
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "token_reused",
                format!("request_token {token:?} was already used for a different refinement"),
            ));
        }
        let gw = Gateway::new(bk, inner.gateway.clone());
        let state = Pipeline::new(&inner.store, &gw).prepare_refine(&parent, &criterion, run_id.as_deref())?;
        let record = TokenRecord {
            parent_run_id: parent,
            criterion,
            run_id: state.run_id,
        };
        tokens.insert(token, record.clone());
        save_tokens(&inner.store, &tokens)?;
        Ok((record, true))
    })
    .await?;

    if fresh {
        let inner = Arc::clone(&st.0);
        let run_id = record.run_id.clone();
        tokio::task::spawn_blocking(move || {
            let _turn = inner.exec.lock().unwrap_or_else(|p| p.into_inner());
            let gw = Gateway::new(backend, inner.gateway.clone());
            match Pipeline::new(&inner.store, &gw).execute(&run_id) {
                Ok(_) => info!(run = %run_id, "refinement finished"),
                Err(e) => warn!(run = %run_id, error = %e, "refinement failed"),
            }
        });
    }
    let body = json!({"run_id": record.run_id, "parent_run_id": record.parent_run_id});
    Ok((StatusCode::ACCEPTED, Json(body)).into_response())
}

fn save_tokens(store: &RunStore, tokens: &BTreeMap<String, TokenRecord>) -> ApiResult<()> {
    let path = tokens_path(store);
    let write = || -> std::io::Result<()> {
        fs::create_dir_all(path.parent().expect("tokens path has a parent"))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(tokens)?)?;
        fs::rename(&tmp, &path)
    };
    write().map_err(|e| critclust::Error::io(&path, e).into())
}
