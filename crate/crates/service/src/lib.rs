//! HTTP JSON front end. A dataset is uploaded once; each analysis is then
//! requested against its session and cached by its parameters, so a
//! repeated request returns the same bytes.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tower_http::cors::{AllowOrigin, CorsLayer};

use gxestat_core::biplot::BiplotMode;
use gxestat_core::data::{
    detect_mapping, parse_csv, ColumnMapping, DataError, EnvironmentGrouping, TrialDataset,
};
use gxestat_core::gge::{gge_biplot, Centering};
use gxestat_core::mixed::FitMethod;
use gxestat_core::pipeline::{run_all, run_ammi, run_significance, run_stability, PipelineOptions};
use gxestat_core::stability::StabilityOptions;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Idle time after which a session is dropped.
    pub session_ttl: Duration,
    pub request_timeout: Duration,
    pub max_boot: usize,
    /// Allowed browser origin; any origin when `None`.
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            session_ttl: Duration::from_secs(3600),
            request_timeout: Duration::from_secs(120),
            max_boot: 10_000,
            cors_origin: None,
        }
    }
}

struct Session {
    dataset: Arc<TrialDataset>,
    /// Response bodies keyed by analysis and canonical parameters. The
    /// async lock also serializes computations on one session.
    cache: tokio::sync::Mutex<HashMap<String, Bytes>>,
    last_used: Mutex<Instant>,
}

struct AppState {
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
}

impl AppState {
    fn session(&self, id: &str) -> Option<Arc<Session>> {
        let now = Instant::now();
        let mut sessions = self.sessions.lock().expect("session map poisoned");
        let ttl = self.config.session_ttl;
        sessions.retain(|_, s| now.duration_since(*s.last_used.lock().expect("poisoned")) < ttl);
        let s = sessions.get(id).cloned()?;
        *s.last_used.lock().expect("poisoned") = now;
        Some(s)
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    module: String,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<u64>,
}

struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, module: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.to_string(),
                module: module.to_string(),
                message: message.into(),
                line: None,
            },
        }
    }

    fn unknown_session(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "UnknownSession",
            "service",
            format!("no session {id:?}"),
        )
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(
            StatusCode::BAD_REQUEST,
            "InvalidRequest",
            "service",
            message,
        )
    }

    fn analysis(e: gxestat_core::Error) -> Self {
        Self::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            &e.kind(),
            e.module(),
            e.to_string(),
        )
    }

    fn data(e: DataError) -> Self {
        let line = match &e {
            DataError::MalformedCsv { line, .. }
            | DataError::NonNumericTrait { line, .. }
            | DataError::NonFiniteTrait { line }
            | DataError::EmptyLabel { line, .. } => Some(*line),
            _ => None,
        };
        let e = gxestat_core::Error::from(e);
        let mut err = Self::new(
            StatusCode::BAD_REQUEST,
            &e.kind(),
            e.module(),
            e.to_string(),
        );
        err.body.line = line;
        err
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::to_vec(&self.body).unwrap_or_default();
        (
            self.status,
            [(header::CONTENT_TYPE, "application/json")],
            body,
        )
            .into_response()
    }
}

fn json_response(body: Bytes) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

/// Empty body means all defaults.
fn parse_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

pub fn router(config: ServiceConfig) -> Router {
    let cors = match &config.cors_origin {
        Some(origin) => match origin.parse() {
            Ok(v) => CorsLayer::new().allow_origin(AllowOrigin::exact(v)),
            Err(_) => CorsLayer::new(),
        },
        None => CorsLayer::new().allow_origin(AllowOrigin::any()),
    }
    .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
    .allow_headers([header::CONTENT_TYPE]);
    let state = Arc::new(AppState {
        config,
        sessions: Mutex::new(HashMap::new()),
    });
    Router::new()
        .route("/healthz", get(healthz))
        .route("/datasets", post(upload))
        .route("/sessions/{id}/significance", post(significance))
        .route("/sessions/{id}/stability", post(stability))
        .route("/sessions/{id}/ammi", post(ammi))
        .route("/sessions/{id}/gge", post(gge))
        .route("/sessions/{id}/bundle", get(bundle))
        .layer(cors)
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(config)).await
}

async fn healthz() -> Response {
    json_response(Bytes::from_static(b"{\"status\":\"ok\"}"))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct UploadJson {
    csv: String,
    mapping: Option<ColumnMapping>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct MappingQuery {
    year: Option<String>,
    location: Option<String>,
    rep: Option<String>,
    genotype: Option<String>,
    #[serde(rename = "trait")]
    trait_name: Option<String>,
}

impl MappingQuery {
    fn apply(self, base: ColumnMapping) -> ColumnMapping {
        ColumnMapping {
            year: self.year.or(base.year),
            location: self.location.unwrap_or(base.location),
            rep: self.rep.or(base.rep),
            genotype: self.genotype.unwrap_or(base.genotype),
            trait_name: self.trait_name.unwrap_or(base.trait_name),
        }
    }
}

#[derive(Serialize)]
struct UploadResponse<'a> {
    session_id: &'a str,
    summary: gxestat_core::data::DatasetSummary,
}

/// CSV as the raw body (mapping in the query string) or JSON
/// `{"csv": ..., "mapping": {...}}`. Sessions are named by a hash of the
/// data and mapping, so uploading the same data again reuses the session.
async fn upload(
    State(state): State<Arc<AppState>>,
    Query(query): Query<MappingQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let is_json = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    let (csv, explicit) = if is_json {
        let u: UploadJson = parse_body(&body)?;
        (Bytes::from(u.csv.into_bytes()), u.mapping)
    } else {
        (body, None)
    };
    let mapping = match explicit {
        Some(m) => m,
        // Optional columns named explicitly must exist; the defaults are
        // dropped when the header lacks them.
        None if query.year.is_some() || query.rep.is_some() => {
            query.apply(ColumnMapping::default())
        }
        None => {
            detect_mapping(&csv, &query.apply(ColumnMapping::default())).map_err(ApiError::data)?
        }
    };
    let ds = parse_csv(&csv, &mapping).map_err(ApiError::data)?;

    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&mapping).unwrap_or_default());
    hasher.update([0u8]);
    hasher.update(&csv);
    let id = hex::encode(&hasher.finalize()[..12]);

    let summary = ds.summary();
    {
        let mut sessions = state.sessions.lock().expect("session map poisoned");
        sessions.entry(id.clone()).or_insert_with(|| {
            Arc::new(Session {
                dataset: Arc::new(ds),
                cache: tokio::sync::Mutex::new(HashMap::new()),
                last_used: Mutex::new(Instant::now()),
            })
        });
    }
    let body = serde_json::to_vec(&UploadResponse {
        session_id: &id,
        summary,
    })
    .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(json_response(Bytes::from(body)))
}

/// Cached body for `key`, computing it off the async runtime on a miss.
async fn cached<F>(
    state: &AppState,
    id: &str,
    key: String,
    compute: F,
) -> Result<Response, ApiError>
where
    F: FnOnce(&TrialDataset) -> Result<Vec<u8>, ApiError> + Send + 'static,
{
    let session = state
        .session(id)
        .ok_or_else(|| ApiError::unknown_session(id))?;
    let mut cache = session.cache.lock().await;
    if let Some(b) = cache.get(&key) {
        return Ok(json_response(b.clone()));
    }
    let ds = Arc::clone(&session.dataset);
    let task = tokio::task::spawn_blocking(move || compute(&ds));
    let out = match tokio::time::timeout(state.config.request_timeout, task).await {
        Err(_) => {
            return Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "Timeout",
                "service",
                format!(
                    "analysis exceeded {} s",
                    state.config.request_timeout.as_secs()
                ),
            ))
        }
        Ok(Err(join)) => {
            log::error!("analysis task failed: {join}");
            return Err(ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "Internal",
                "service",
                "internal error",
            ));
        }
        Ok(Ok(r)) => r?,
    };
    let body = Bytes::from(out);
    cache.insert(key, body.clone());
    Ok(json_response(body))
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>, ApiError> {
    serde_json::to_vec(v).map_err(|e| {
        log::error!("serialization failed: {e}");
        ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "Internal",
            "service",
            "internal error",
        )
    })
}

fn key<T: Serialize>(analysis: &str, params: &T) -> String {
    format!(
        "{analysis}:{}",
        serde_json::to_string(params).unwrap_or_default()
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SignificanceParams {
    case: u8,
    lrt_method: FitMethod,
}

impl Default for SignificanceParams {
    fn default() -> Self {
        Self {
            case: 1,
            lrt_method: FitMethod::Reml,
        }
    }
}

async fn significance(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let p: SignificanceParams = parse_body(&body)?;
    let k = key("significance", &p);
    cached(&state, &id, k, move |ds| {
        let mut opts = PipelineOptions {
            case: p.case,
            ..PipelineOptions::default()
        };
        opts.significance.lrt.method = p.lrt_method;
        to_json(&run_significance(ds, &opts).map_err(ApiError::analysis)?)
    })
    .await
}

async fn stability(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let p: StabilityOptions = parse_body(&body)?;
    let k = key("stability", &p);
    cached(&state, &id, k, move |ds| {
        let opts = PipelineOptions {
            stability: p,
            ..PipelineOptions::default()
        };
        to_json(&run_stability(ds, &opts).map_err(ApiError::analysis)?)
    })
    .await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AmmiParams {
    n_components: Option<usize>,
    alpha: f64,
    n_boot: usize,
    seed: u64,
    grouping: EnvironmentGrouping,
}

impl Default for AmmiParams {
    fn default() -> Self {
        Self {
            n_components: None,
            alpha: 0.05,
            n_boot: 1000,
            seed: 0,
            grouping: EnvironmentGrouping::Location,
        }
    }
}

async fn ammi(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let p: AmmiParams = parse_body(&body)?;
    if p.n_boot > state.config.max_boot {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "BootstrapLimit",
            "service",
            format!(
                "n_boot {} exceeds the limit of {}",
                p.n_boot, state.config.max_boot
            ),
        ));
    }
    let k = key("ammi", &p);
    cached(&state, &id, k, move |ds| {
        let opts = PipelineOptions {
            components: p.n_components,
            alpha: p.alpha,
            n_boot: p.n_boot,
            seed: p.seed,
            grouping: p.grouping,
            ..PipelineOptions::default()
        };
        to_json(&run_ammi(ds, &opts).map_err(ApiError::analysis)?)
    })
    .await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GgeParams {
    centering: Centering,
    svp: Option<f64>,
    mode: BiplotMode,
    grouping: EnvironmentGrouping,
}

impl Default for GgeParams {
    fn default() -> Self {
        Self {
            centering: Centering::EnvironmentCentered,
            svp: None,
            mode: BiplotMode::PcScatter,
            grouping: EnvironmentGrouping::Location,
        }
    }
}

async fn gge(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let p: GgeParams = parse_body(&body)?;
    let k = key("gge", &p);
    cached(&state, &id, k, move |ds| {
        let table = gxestat_core::data::two_way_means(ds, p.grouping);
        let g = gge_biplot(&table, p.mode, p.centering, p.svp)
            .map_err(|e| ApiError::analysis(e.into()))?;
        to_json(&g)
    })
    .await
}

async fn bundle(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    cached(&state, &id, "bundle".into(), |ds| {
        let b = run_all(ds, &PipelineOptions::default()).map_err(ApiError::analysis)?;
        Ok(b.to_json().into_bytes())
    })
    .await
}
