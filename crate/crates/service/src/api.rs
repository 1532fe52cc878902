//! HTTP recommendation API over an immutable store snapshot.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};

use stationprint_core::collector::{load_catalog, StationRecord};
use stationprint_core::fingerprint::Partition;
use stationprint_core::recommend::{nearest_k, within_radius, FingerprintStore, RecommendError};

use crate::pipeline::Artifacts;

/// Neighbors returned when the query names neither `k` nor `radius`.
pub const DEFAULT_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypePosition {
    pub partition: Partition,
    pub index: usize,
    pub x: f64,
    pub y: f64,
}

/// Everything one request needs, loaded once and never mutated.
#[derive(Debug)]
pub struct Snapshot {
    pub store: FingerprintStore,
    pub catalog: Vec<StationRecord>,
    pub archetypes: Vec<ArchetypePosition>,
}

impl Snapshot {
    /// Loads `fingerprints.jsonl`, `catalog.json` and, when present,
    /// `analysis/archetypes.csv` from a pipeline work directory.
    pub fn load(art: &Artifacts) -> Result<Self, SnapshotError> {
        let catalog = if art.catalog().exists() {
            load_catalog(art.catalog()).map_err(|e| SnapshotError::Other(e.to_string()))?
        } else {
            Vec::new()
        };
        let store = match FingerprintStore::load(art.fingerprints()) {
            Ok(s) => s.with_catalog(&catalog),
            Err(e @ RecommendError::VersionMismatch(..)) => return Err(SnapshotError::MixedVersions(e.to_string())),
            Err(e) => return Err(SnapshotError::Other(e.to_string())),
        };
        let path = art.analysis().join("archetypes.csv");
        let archetypes = if path.exists() { read_archetypes(&path)? } else { Vec::new() };
        Ok(Snapshot { store, catalog, archetypes })
    }
}

fn read_archetypes(path: &std::path::Path) -> Result<Vec<ArchetypePosition>, SnapshotError> {
    let bad = |e: &dyn std::fmt::Display| SnapshotError::Other(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(&e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(&e))?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        out.push(ArchetypePosition {
            partition: field(0).parse().map_err(|e| bad(&e))?,
            index: field(1).parse().map_err(|e| bad(&e))?,
            x: field(2).parse().map_err(|e| bad(&e))?,
            y: field(3).parse().map_err(|e| bad(&e))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum SnapshotError {
    #[error("{0}")]
    MixedVersions(String),
    #[error("{0}")]
    Other(String),
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    artifacts: Artifacts,
    admin_token: Option<String>,
    /// Current snapshot, or why none could be loaded.
    current: RwLock<Result<Arc<Snapshot>, SnapshotError>>,
}

impl AppState {
    /// Loads the initial snapshot. A failed load still yields a state; the
    /// API then answers 503 until a reload succeeds.
    pub fn new(artifacts: Artifacts, admin_token: Option<String>) -> Self {
        let current = Snapshot::load(&artifacts).map(Arc::new);
        if let Err(e) = &current {
            log::error!("store snapshot not loaded: {e}");
        }
        AppState { inner: Arc::new(Inner { artifacts, admin_token, current: RwLock::new(current) }) }
    }

    pub fn from_work_dir(dir: impl Into<PathBuf>, admin_token: Option<String>) -> Self {
        Self::new(Artifacts::at(dir), admin_token)
    }

    pub fn snapshot(&self) -> Result<Arc<Snapshot>, SnapshotError> {
        self.inner.current.read().expect("snapshot lock").clone()
    }

    /// Loads the store again and swaps it in whole. On failure the old
    /// snapshot stays.
    pub fn reload(&self) -> Result<Arc<Snapshot>, SnapshotError> {
        let fresh = Arc::new(Snapshot::load(&self.inner.artifacts)?);
        *self.inner.current.write().expect("snapshot lock") = Ok(fresh.clone());
        Ok(fresh)
    }
}

fn json_response(status: StatusCode, body: &impl Serialize) -> Response {
    let bytes = serde_json::to_vec(body).expect("response serializes");
    (status, [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], bytes).into_response()
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    json_response(status, &serde_json::json!({ "error": msg.into() }))
}

fn unavailable(e: &SnapshotError) -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, format!("store unavailable: {e}"))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/stations", get(stations))
        .route("/stations/{id}/recommendations", get(recommendations))
        .route("/archetypes", get(archetypes))
        .route("/admin/reload", post(reload))
        .with_state(state)
}

async fn health(State(state): State<AppState>) -> Response {
    match state.snapshot() {
        Ok(s) => json_response(
            StatusCode::OK,
            &serde_json::json!({
                "status": "ok",
                "model_version": s.store.model_version(),
                "stations": s.store.stations().len(),
                "fingerprints": s.store.len(),
            }),
        ),
        Err(e) => unavailable(&e),
    }
}

#[derive(Serialize)]
struct StationEntry {
    station_id: String,
    name: String,
    genres: Vec<String>,
    partitions: Vec<Partition>,
}

async fn stations(State(state): State<AppState>) -> Response {
    let snap = match state.snapshot() {
        Ok(s) => s,
        Err(e) => return unavailable(&e),
    };
    let mut ids: BTreeSet<&str> = snap.catalog.iter().map(|s| s.station_id.as_str()).collect();
    ids.extend(snap.store.stations());
    let entries: Vec<StationEntry> = ids
        .into_iter()
        .map(|id| {
            let info = snap.store.info(id);
            StationEntry {
                station_id: id.to_string(),
                name: info.name,
                genres: info.genres,
                partitions: snap.store.partitions_of(id),
            }
        })
        .collect();
    json_response(StatusCode::OK, &entries)
}

fn parse_partition(q: &BTreeMap<String, String>) -> Result<Partition, Response> {
    match q.get("partition") {
        None => Ok(Partition::WholeDay),
        Some(p) => p.parse().map_err(|e: stationprint_core::fingerprint::FingerprintError| error(StatusCode::BAD_REQUEST, e.to_string())),
    }
}

async fn recommendations(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<BTreeMap<String, String>>,
) -> Response {
    if let Some(unknown) = q.keys().find(|k| !["k", "radius", "partition"].contains(&k.as_str())) {
        return error(StatusCode::BAD_REQUEST, format!("unknown parameter {unknown:?}"));
    }
    let partition = match parse_partition(&q) {
        Ok(p) => p,
        Err(r) => return r,
    };
    let snap = match state.snapshot() {
        Ok(s) => s,
        Err(e) => return unavailable(&e),
    };
    let result = match (q.get("k"), q.get("radius")) {
        (Some(_), Some(_)) => return error(StatusCode::BAD_REQUEST, "k and radius are mutually exclusive"),
        (None, Some(r)) => match r.parse::<f64>() {
            Ok(r) => within_radius(&snap.store, &id, r, partition),
            Err(_) => return error(StatusCode::BAD_REQUEST, format!("radius {r:?} is not a number")),
        },
        (k, None) => match k.map_or(Ok(DEFAULT_K), |k| k.parse::<usize>()) {
            Ok(k) => nearest_k(&snap.store, &id, k, partition),
            Err(_) => return error(StatusCode::BAD_REQUEST, "k must be a positive integer"),
        },
    };
    match result {
        Ok(recs) => {
            let mut resp = json_response(StatusCode::OK, &recs);
            if let Ok(v) = HeaderValue::from_str(snap.store.model_version()) {
                resp.headers_mut().insert("x-model-version", v);
            }
            resp
        }
        Err(e @ RecommendError::NotFound { .. }) => error(StatusCode::NOT_FOUND, e.to_string()),
        Err(e @ RecommendError::InvalidQuery(_)) => error(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e @ RecommendError::VersionMismatch(..)) => error(StatusCode::SERVICE_UNAVAILABLE, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn archetypes(State(state): State<AppState>, Query(q): Query<BTreeMap<String, String>>) -> Response {
    let partition = match parse_partition(&q) {
        Ok(p) => p,
        Err(r) => return r,
    };
    let snap = match state.snapshot() {
        Ok(s) => s,
        Err(e) => return unavailable(&e),
    };
    let rows: Vec<&ArchetypePosition> = snap.archetypes.iter().filter(|a| a.partition == partition).collect();
    json_response(StatusCode::OK, &rows)
}

async fn reload(State(state): State<AppState>, headers: HeaderMap) -> Response {
    let Some(token) = state.inner.admin_token.as_deref() else {
        return error(StatusCode::FORBIDDEN, "reload is disabled: no admin token configured");
    };
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given != Some(token) {
        return error(StatusCode::UNAUTHORIZED, "bad or missing admin token");
    }
    match state.reload() {
        Ok(s) => json_response(StatusCode::OK, &serde_json::json!({ "model_version": s.store.model_version(), "fingerprints": s.store.len() })),
        Err(e @ SnapshotError::MixedVersions(_)) => unavailable(&e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("reload failed, previous snapshot kept: {e}")),
    }
}

/// Serves the API on `bind` until the future is dropped.
pub async fn serve(state: AppState, bind: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("serving on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

/// Binds first and returns the address, then serves in a spawned task.
pub async fn spawn(state: AppState, bind: std::net::SocketAddr) -> std::io::Result<(std::net::SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    let addr = listener.local_addr()?;
    let task = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router(state)).await {
            log::error!("server stopped: {e}");
        }
    });
    Ok((addr, task))
}
