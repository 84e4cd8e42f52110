//! JSON HTTP API over an immutable corpus snapshot.

use std::path::PathBuf;
use std::sync::Arc;

use arc_swap::ArcSwap;
use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;
use trialbench::analysis::{
    density_spec, forest_spec, funnel_centre, run_analysis, selection_from_query, AnalysisRequest,
    AnalysisResponse, SetAnalysis,
};
use trialbench::bayes::{Parameter, PosteriorModel};
use trialbench::classical::{self, Method};
use trialbench::dataset::{export_csv, load_database, resolve_selection, DatabaseSnapshot};
use trialbench::effectsize::{EffectEstimate, EffectScale};
use trialbench::plots::{render_density, render_forest, render_funnel, DensityPlotSpec, ForestPlotSpec};
use trialbench::search::{list_meta_analyses, FilterMode, Query, SearchIndex};
use trialbench::Error;

/// A snapshot with its search index.
pub struct Corpus {
    pub snapshot: DatabaseSnapshot,
    pub index: SearchIndex,
}

impl Corpus {
    pub fn new(snapshot: DatabaseSnapshot) -> Self {
        let index = SearchIndex::build(&snapshot);
        Corpus { snapshot, index }
    }
}

pub struct AppState {
    corpus: ArcSwap<Corpus>,
    db_path: Option<PathBuf>,
}

impl AppState {
    pub fn new(snapshot: DatabaseSnapshot, db_path: Option<PathBuf>) -> Arc<Self> {
        Arc::new(AppState {
            corpus: ArcSwap::from_pointee(Corpus::new(snapshot)),
            db_path,
        })
    }

    pub fn corpus(&self) -> Arc<Corpus> {
        self.corpus.load_full()
    }

    /// Reloads the corpus file; requests in flight keep the old snapshot.
    pub fn reload(&self) -> Result<trialbench::dataset::CorpusCounts, Error> {
        let path = self
            .db_path
            .as_ref()
            .ok_or_else(|| Error::Invalid {
                field: "db".into(),
                message: "server was started without a corpus path".into(),
            })?;
        let snapshot = load_database(path)?;
        let counts = snapshot.counts();
        self.corpus.store(Arc::new(Corpus::new(snapshot)));
        Ok(counts)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub static_dir: Option<PathBuf>,
    /// Allowed CORS origins; empty allows any origin.
    pub cors_origins: Vec<String>,
}

pub fn router(state: Arc<AppState>, config: &ServiceConfig) -> Router {
    let cors = if config.cors_origins.is_empty() {
        CorsLayer::new().allow_origin(Any)
    } else {
        let origins: Vec<HeaderValue> = config
            .cors_origins
            .iter()
            .filter_map(|o| HeaderValue::from_str(o).ok())
            .collect();
        CorsLayer::new().allow_origin(AllowOrigin::list(origins))
    }
    .allow_methods(Any)
    .allow_headers(Any);

    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/reviews", get(reviews))
        .route("/api/meta-analyses", get(meta_analyses))
        .route("/api/analyze", post(analyze))
        .route("/api/plots/{kind}", post(plot))
        .route("/api/export.csv", get(export))
        .route("/api/admin/reload", post(reload))
        .with_state(state);
    let app = match &config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(cors)
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    code: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>, path: Option<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code,
                message: message.into(),
                path,
            },
        }
    }

    fn bad_request(message: impl Into<String>, path: &str) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message, Some(path.into()))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let unprocessable = StatusCode::UNPROCESSABLE_ENTITY;
        match e {
            Error::Invalid { field, message } => ApiError::new(unprocessable, "invalid", message, Some(field)),
            Error::EmptySelection => ApiError::new(unprocessable, "empty_selection", message, Some("selection".into())),
            Error::ScaleMismatch { .. } | Error::PrecomputedScale { .. } => {
                ApiError::new(unprocessable, "scale_mismatch", message, Some("scale".into()))
            }
            Error::InsufficientStudies(_) => ApiError::new(unprocessable, "insufficient_studies", message, None),
            Error::Csv(_) => ApiError::new(unprocessable, "csv", message, None),
            Error::UnknownId(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", message, None),
            Error::Numerical(_) | Error::Quadrature { .. } => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "numerical", message, None)
            }
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message, None),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.body }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Parses a JSON body, reporting the failing field path on error.
fn parse_body<T: DeserializeOwned>(bytes: &[u8]) -> ApiResult<T> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_body",
            e.inner().to_string(),
            (path != ".").then_some(path),
        )
    })
}

fn query_pairs(raw: &Option<String>) -> Vec<(String, String)> {
    raw.as_deref()
        .map(|q| form_urlencoded::parse(q.as_bytes()).into_owned().collect())
        .unwrap_or_default()
}

/// Compact JSON; identical values give identical bytes.
fn json_response<T: Serialize>(value: &T) -> ApiResult<Response> {
    let body = serde_json::to_vec(value)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), None))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
}

fn svg_response(svg: String) -> Response {
    ([(header::CONTENT_TYPE, "image/svg+xml")], svg).into_response()
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Error> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string(), None))?
        .map_err(ApiError::from)
}

async fn health(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    json_response(&state.corpus().snapshot.counts())
}

#[derive(Serialize)]
struct ReviewSummary<'a> {
    id: &'a str,
    title: &'a str,
    year: i32,
}

async fn reviews(State(state): State<Arc<AppState>>, RawQuery(raw): RawQuery) -> ApiResult<Response> {
    let pairs = query_pairs(&raw);
    let get = |k: &str| pairs.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    let mode: FilterMode = get("mode")
        .unwrap_or("title")
        .parse()
        .map_err(|e: Error| ApiError::bad_request(e.to_string(), "mode"))?;
    let q = get("q").unwrap_or("");
    let corpus = state.corpus();
    let ids = corpus.index.filter(mode, &Query::Text(q.to_string()));
    let out: Vec<ReviewSummary> = ids
        .iter()
        .filter_map(|id| corpus.snapshot.review(id))
        .map(|r| ReviewSummary {
            id: &r.id,
            title: &r.title,
            year: r.year,
        })
        .collect();
    json_response(&out)
}

async fn meta_analyses(State(state): State<Arc<AppState>>, RawQuery(raw): RawQuery) -> ApiResult<Response> {
    let ids: Vec<String> = query_pairs(&raw)
        .into_iter()
        .filter(|(k, _)| k == "review_id")
        .flat_map(|(_, v)| v.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect();
    if ids.is_empty() {
        return Err(ApiError::bad_request("review_id is required", "review_id"));
    }
    let corpus = state.corpus();
    json_response(&list_meta_analyses(&corpus.snapshot, &ids)?)
}

async fn analyze(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let request: AnalysisRequest = parse_body(&body)?;
    let corpus = state.corpus();
    let response = blocking(move || run_analysis(&corpus.snapshot, &request)).await?;
    json_response(&response)
}

/// Precomputed estimates for a standalone funnel plot.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FunnelBody {
    estimates: Vec<FunnelPoint>,
    scale: EffectScale,
    /// Pooling method for the centre line; fixed effect when absent.
    #[serde(default)]
    method: Option<Method>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FunnelPoint {
    label: String,
    y: f64,
    se: f64,
    #[serde(default)]
    is_new: bool,
}

#[derive(Debug, Default)]
struct PlotOptions {
    set: usize,
    parameter: Option<Parameter>,
    model: Option<PosteriorModel>,
}

fn plot_options(raw: &Option<String>) -> ApiResult<PlotOptions> {
    let mut opts = PlotOptions::default();
    for (k, v) in query_pairs(raw) {
        match k.as_str() {
            "set" => opts.set = v.parse().map_err(|_| ApiError::bad_request("expected an index", "set"))?,
            "parameter" => {
                opts.parameter = Some(match v.as_str() {
                    "mu" => Parameter::Mu,
                    "tau" => Parameter::Tau,
                    _ => return Err(ApiError::bad_request("expected mu or tau", "parameter")),
                })
            }
            "model" => {
                opts.model = Some(v.parse().map_err(|e: Error| ApiError::bad_request(e.to_string(), "model"))?)
            }
            other => return Err(ApiError::bad_request("unknown query parameter", other)),
        }
    }
    Ok(opts)
}

fn pick_set(response: AnalysisResponse, index: usize) -> ApiResult<SetAnalysis> {
    let n = response.analyses.len();
    response
        .analyses
        .into_iter()
        .nth(index)
        .ok_or_else(|| ApiError::bad_request(format!("set {index} out of range ({n} analysed)"), "set"))
}

async fn plot(
    State(state): State<Arc<AppState>>,
    Path(kind): Path<String>,
    RawQuery(raw): RawQuery,
    body: Bytes,
) -> ApiResult<Response> {
    let opts = plot_options(&raw)?;
    let value: serde_json::Value = parse_body(&body)?;
    let is_request = value.get("selection").is_some();
    let corpus = state.corpus();

    let set_index = opts.set;
    let analysed = |request: AnalysisRequest| {
        let corpus = corpus.clone();
        async move {
            let response = blocking(move || run_analysis(&corpus.snapshot, &request)).await?;
            pick_set(response, set_index)
        }
    };

    let svg = match kind.as_str() {
        "forest" => {
            let spec: ForestPlotSpec = if is_request {
                forest_spec(&analysed(parse_body(&body)?).await?)?
            } else {
                parse_body(&body)?
            };
            render_forest(&spec)?
        }
        "funnel" => {
            if is_request {
                let a = analysed(parse_body(&body)?).await?;
                render_funnel(&a.estimates, &funnel_centre(&a)?, a.scale)?
            } else {
                let f: FunnelBody = parse_body(&body)?;
                let estimates: Vec<EffectEstimate> = f
                    .estimates
                    .into_iter()
                    .map(|p| EffectEstimate {
                        is_new: p.is_new,
                        ..EffectEstimate::new(p.label, p.y, p.se, f.scale)
                    })
                    .collect();
                if let Some(e) = estimates.iter().position(|e| !(e.se > 0.0 && e.se.is_finite())) {
                    return Err(ApiError::new(
                        StatusCode::UNPROCESSABLE_ENTITY,
                        "invalid",
                        "standard error must be positive",
                        Some(format!("estimates[{e}].se")),
                    ));
                }
                let centre = classical::pool(&estimates, f.method.unwrap_or(Method::FixedIv))?;
                render_funnel(&estimates, &centre, f.scale)?
            }
        }
        "density" => {
            let spec: DensityPlotSpec = if is_request {
                let request: AnalysisRequest = parse_body(&body)?;
                if request.bayesian.is_none() {
                    return Err(ApiError::new(
                        StatusCode::UNPROCESSABLE_ENTITY,
                        "invalid",
                        "density plots need a bayesian block",
                        Some("bayesian".into()),
                    ));
                }
                let a = analysed(request).await?;
                density_spec(
                    &a,
                    opts.parameter.unwrap_or(Parameter::Mu),
                    opts.model.unwrap_or(PosteriorModel::Averaged),
                )?
            } else {
                parse_body(&body)?
            };
            render_density(&spec)?
        }
        other => {
            return Err(ApiError::new(
                StatusCode::NOT_FOUND,
                "not_found",
                format!("unknown plot `{other}` (forest, funnel, density)"),
                None,
            ))
        }
    };
    Ok(svg_response(svg))
}

async fn export(State(state): State<Arc<AppState>>, RawQuery(raw): RawQuery) -> ApiResult<Response> {
    let pairs = query_pairs(&raw);
    let selection = selection_from_query(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    let corpus = state.corpus();
    let sets = resolve_selection(&corpus.snapshot, &selection)?;
    let csv = export_csv(&sets)?;
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8"),
            (header::CONTENT_DISPOSITION, "attachment; filename=\"studies.csv\""),
        ],
        csv,
    )
        .into_response())
}

async fn reload(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    let counts = state.reload().map_err(|e| match e {
        Error::Invalid { message, .. } => ApiError::new(StatusCode::CONFLICT, "no_corpus_path", message, None),
        other => ApiError::from(other),
    })?;
    json_response(&counts)
}

/// Binds and serves until interrupted.
pub async fn serve(state: Arc<AppState>, config: ServiceConfig, port: u16) -> std::io::Result<()> {
    let app = router(state, &config);
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
