//! HTTP API over the trained models.
//!
//! Every payload is JSON. Request bodies reject unknown fields.

use std::collections::BTreeMap;
use std::future::{Future, IntoFuture};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use anyhow::Context;
use axum::extract::{Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use raccer::benchmark::{sample_factual_dataset, BenchmarkConfig};
use raccer::env::{purpose, splitmix64};
use raccer::properties::LossWeights;
use raccer::*;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tower_http::cors::{Any, CorsLayer};

use crate::explain::{explain, recheck, Explanation};
use crate::models::{features, render_lines, Models};

/// Upper bound on `count` for `/api/sample-states`.
pub const MAX_SAMPLE_STATES: usize = 200;
/// Upper bound on `n` for `/api/simulate`.
pub const MAX_SIMULATIONS: u32 = 100_000;

pub struct AppState {
    pub config: RunConfig,
    pub models: OnceLock<Models>,
}

impl AppState {
    pub fn new(config: RunConfig) -> Self {
        Self { config, models: OnceLock::new() }
    }

    pub fn ready(config: RunConfig, models: Models) -> Self {
        let s = Self::new(config);
        s.models.set(models).expect("fresh cell");
        s
    }

    fn models(&self) -> Result<&Models, ApiError> {
        self.models.get().ok_or(ApiError::NotReady)
    }
}

#[derive(Debug)]
pub enum ApiError {
    Invalid(String),
    NotReady,
    Timeout(u64),
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody {
    error: &'static str,
    detail: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, error, detail) = match self {
            ApiError::Invalid(d) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid request", d),
            ApiError::NotReady => (StatusCode::SERVICE_UNAVAILABLE, "not ready", "models are still loading".into()),
            ApiError::Timeout(ms) => (StatusCode::GATEWAY_TIMEOUT, "timeout", format!("explanation exceeded the {ms} ms budget")),
            ApiError::Internal(d) => (StatusCode::INTERNAL_SERVER_ERROR, "internal error", d),
        };
        (status, Json(ErrorBody { error, detail })).into_response()
    }
}

fn invalid(e: impl std::fmt::Display) -> ApiError {
    ApiError::Invalid(format!("{e:#}"))
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let cors = match state.config.serve.allowed_origin.as_deref().map(HeaderValue::from_str) {
        Some(Ok(origin)) => cors.allow_origin(origin),
        _ => cors.allow_origin(Any),
    };
    Router::new()
        .route("/api/health", get(health))
        .route("/api/predict", post(predict))
        .route("/api/explain", post(explain_handler))
        .route("/api/simulate", post(simulate))
        .route("/api/sample-states", get(sample_states))
        .layer(cors)
        .with_state(state)
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub ready: bool,
    pub config_hash: String,
    pub policy: String,
    pub autoencoder: String,
}

async fn health(State(st): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        ready: st.models.get().is_some(),
        config_hash: st.config.config_hash(),
        policy: st.config.paths.policy.display().to_string(),
        autoencoder: st.config.paths.autoencoder.display().to_string(),
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub state: Vec<i64>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub action: String,
    /// Q-values in action-index order.
    pub action_values: Vec<f64>,
    pub actions: Vec<String>,
    pub render: Vec<String>,
}

async fn predict(State(st): State<Arc<AppState>>, Json(req): Json<PredictRequest>) -> Result<Json<PredictResponse>, ApiError> {
    let m = st.models()?;
    let s = m.state(&req.state).map_err(invalid)?;
    let a = m.policy.predict(&s).map_err(invalid)?;
    Ok(Json(PredictResponse {
        action: a.label.to_string(),
        action_values: m.policy.action_values(&s),
        actions: m.world.actions().iter().map(|a| a.label.to_string()).collect(),
        render: render_lines(&m.world, &s),
    }))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainRequest {
    pub state: Vec<i64>,
    pub action: String,
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub simulations: Option<u32>,
    #[serde(default)]
    pub max_actions: Option<usize>,
    #[serde(default)]
    pub weights: Option<LossWeights>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ExplainRequest {
    /// Seed derived from the request itself, so an unseeded request is
    /// still reproducible.
    pub fn derived_seed(&self) -> u64 {
        let canonical = serde_json::to_vec(&ExplainRequest { seed: None, ..self.clone() }).expect("request serializes");
        let d = Sha256::digest(&canonical);
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}

async fn explain_handler(State(st): State<Arc<AppState>>, Json(req): Json<ExplainRequest>) -> Result<Json<Explanation>, ApiError> {
    st.models()?;
    let cfg = &st.config;
    let mut scfg = cfg.search.clone();
    scfg.iterations = req.iterations.unwrap_or(scfg.iterations);
    scfg.simulations = req.simulations.unwrap_or(scfg.simulations);
    scfg.max_actions = req.max_actions.unwrap_or(scfg.max_actions);
    if let Some(w) = req.weights {
        w.validate().map_err(invalid)?;
        scfg.weights = w;
    }
    scfg.seed = req.seed.unwrap_or_else(|| req.derived_seed());
    let budget = cfg.serve.explain_budget_ms;
    scfg.max_wall_ms = Some(budget);
    scfg.validate().map_err(invalid)?;
    let gcfg = GaConfig { seed: scfg.seed, ..cfg.genetic.clone() };
    let method = req.method.unwrap_or(cfg.method);

    let worker = {
        let st = st.clone();
        tokio::task::spawn_blocking(move || -> Result<Explanation, ApiError> {
            let m = st.models()?;
            let s = m.state(&req.state).map_err(invalid)?;
            if s.terminal {
                return Err(invalid("state is terminal"));
            }
            let desired = m.action(&req.action).map_err(invalid)?;
            let e = match explain(m, &s, desired, method, &scfg, &gcfg) {
                Ok(e) => e,
                Err(err) => {
                    return Err(match err.downcast_ref::<Error>() {
                        Some(Error::Timeout(ms)) => ApiError::Timeout(*ms),
                        _ => ApiError::Internal(format!("{err:#}")),
                    })
                }
            };
            recheck(m, &e, desired).map_err(|e| ApiError::Internal(format!("{e:#}")))?;
            Ok(e)
        })
    };
    match tokio::time::timeout(Duration::from_millis(budget), worker).await {
        Ok(Ok(r)) => r.map(Json),
        Ok(Err(join)) => Err(ApiError::Internal(join.to_string())),
        Err(_) => Err(ApiError::Timeout(budget)),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateRequest {
    pub state: Vec<i64>,
    #[serde(default)]
    pub actions: Vec<String>,
    pub n: u32,
    /// Action whose frequency at the end of the sequence is reported as
    /// `success_rate`.
    #[serde(default)]
    pub desired: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub state: Vec<i64>,
    pub terminal: bool,
    pub count: u32,
    pub render: Vec<String>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateResponse {
    pub n: u32,
    /// Distinct end states, most frequent first.
    pub outcomes: Vec<Outcome>,
    /// Policy choices in non-terminal end states.
    pub action_frequencies: BTreeMap<String, u32>,
    pub success_rate: Option<f64>,
}

async fn simulate(State(st): State<Arc<AppState>>, Json(req): Json<SimulateRequest>) -> Result<Json<SimulateResponse>, ApiError> {
    let m = st.models()?;
    if req.n == 0 || req.n > MAX_SIMULATIONS {
        return Err(invalid(format!("n must lie in 1..={MAX_SIMULATIONS}")));
    }
    let start = m.state(&req.state).map_err(invalid)?;
    let actions = req.actions.iter().map(|a| m.action(a)).collect::<anyhow::Result<Vec<_>>>().map_err(invalid)?;
    let desired = req.desired.as_deref().map(|a| m.action(a)).transpose().map_err(invalid)?;
    let seed = req.seed.unwrap_or(st.config.seed);
    let base = RngStream::new(seed, purpose::SIMULATE);

    let mut ends: BTreeMap<Vec<i64>, (bool, u32, GridState)> = BTreeMap::new();
    let mut freq: BTreeMap<String, u32> = BTreeMap::new();
    let mut hits = 0u32;
    for i in 0..req.n {
        let mut rng = base.derive(i as u64).rng();
        let mut s = start.clone();
        for &a in &actions {
            if s.terminal {
                break;
            }
            s = m.world.step(&s, a, &mut rng as &mut dyn RngCore).map_err(invalid)?.next_state;
        }
        if !s.terminal {
            let chosen = m.policy.predict(&s).map_err(invalid)?;
            *freq.entry(chosen.label.to_string()).or_default() += 1;
            hits += (Some(chosen) == desired) as u32;
        }
        let e = ends.entry(features(&m.world, &s)).or_insert((s.terminal, 0, s.clone()));
        e.1 += 1;
    }
    let mut outcomes: Vec<Outcome> = ends
        .into_iter()
        .map(|(f, (terminal, count, s))| Outcome { state: f, terminal, count, render: render_lines(&m.world, &s) })
        .collect();
    outcomes.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.state.cmp(&b.state)));
    Ok(Json(SimulateResponse { n: req.n, outcomes, action_frequencies: freq, success_rate: desired.map(|_| hits as f64 / req.n as f64) }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleParams {
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledState {
    pub state: Vec<i64>,
    pub greedy_action: String,
    pub render: Vec<String>,
}

async fn sample_states(State(st): State<Arc<AppState>>, Query(p): Query<SampleParams>) -> Result<Json<Vec<SampledState>>, ApiError> {
    let m = st.models()?;
    let count = p.count.unwrap_or(5);
    if count > MAX_SAMPLE_STATES {
        return Err(invalid(format!("count must be at most {MAX_SAMPLE_STATES}")));
    }
    if count == 0 {
        return Ok(Json(Vec::new()));
    }
    let seed = p.seed.unwrap_or(st.config.seed);
    let bcfg = BenchmarkConfig { n_states: count, pool_episodes: 50, seed: splitmix64(seed), ..Default::default() };
    let queries = sample_factual_dataset(&m.world, &m.policy, &bcfg).map_err(|e| ApiError::Internal(e.to_string()))?;
    let mut out: Vec<SampledState> = Vec::new();
    for q in queries {
        let f = features(&m.world, &q.state);
        if out.last().is_some_and(|l| l.state == f) {
            continue;
        }
        let greedy = m.policy.predict(&q.state).map_err(|e| ApiError::Internal(e.to_string()))?;
        out.push(SampledState { state: f, greedy_action: greedy.label.to_string(), render: render_lines(&m.world, &q.state) });
    }
    Ok(Json(out))
}

/// Bind, load models in the background, and serve until `shutdown` resolves.
/// A model that fails to load stops the server with an error.
pub async fn serve(config: RunConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> anyhow::Result<()> {
    let addr = std::net::SocketAddr::from(([0, 0, 0, 0], config.serve.port));
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("cannot listen on {addr}"))?;
    log::info!("listening on {}", listener.local_addr()?);
    let state = Arc::new(AppState::new(config));
    let loader = {
        let st = state.clone();
        tokio::task::spawn_blocking(move || -> anyhow::Result<()> {
            let m = Models::load(&st.config)?;
            let _ = st.models.set(m);
            log::info!("models loaded");
            Ok(())
        })
    };
    let server = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).into_future();
    tokio::pin!(server);
    tokio::select! {
        r = &mut server => return Ok(r?),
        r = loader => r??,
    }
    Ok(server.await?)
}
