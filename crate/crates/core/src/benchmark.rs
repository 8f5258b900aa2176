//! Evaluation protocol: factual dataset sampling, running every method on
//! each (state, alternative action) query, scoring, and aggregation.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{hash_indices, purpose, splitmix64, EnvAction, Environment, FeatureSpace, PolicyOracle, RngStream};
use crate::error::{config_err, Error, Result};
use crate::genetic::{run_genetic, GaConfig};
use crate::gridworld::{GridState, GridWorld};
use crate::properties::{baseline_loss, raccer_loss, ActionSequence, LossWeights};
use crate::search::{certainty_stream, search, Counterfactual, Engine, Method, NodeLoss, SearchConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Distinct factual states in the dataset.
    pub n_states: usize,
    /// Greedy episodes rolled out to build the pool the states are drawn from.
    pub pool_episodes: u64,
    /// Rollout states used to train the autoencoder.
    pub autoencoder_states: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { n_states: 100, pool_episodes: 500, autoencoder_states: 500, methods: Method::ALL.to_vec(), seed: 0 }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.pool_episodes == 0 || self.autoencoder_states == 0 {
            return Err(config_err("benchmark sizes must be positive"));
        }
        if self.methods.is_empty() {
            return Err(config_err("at least one method must be configured"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactualQuery<S> {
    pub id: usize,
    pub state: S,
    pub desired: EnvAction,
}

/// One dataset line: the state's features and the desired action index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryLine {
    pub id: usize,
    pub features: Vec<i64>,
    pub action: usize,
}

fn int_features(f: &[f64]) -> Vec<i64> {
    f.iter().map(|&v| v as i64).collect()
}

/// Greedy episodes from sampled initial states; calls `visit` on every
/// non-terminal state in order. Stops early when `visit` returns false.
fn greedy_rollouts<O>(world: &GridWorld, oracle: &O, episodes: u64, seed: u64, mut visit: impl FnMut(&GridState) -> bool) -> Result<()>
where
    O: PolicyOracle<GridState>,
{
    let base = RngStream::new(seed, purpose::DATASET);
    for ep in 0..episodes {
        let mut rng = base.derive_all(&[purpose::SIMULATE, ep]).rng();
        let mut s = world.sample_initial_state(base.derive_all(&[purpose::INIT, ep]));
        while !s.terminal {
            if !visit(&s) {
                return Ok(());
            }
            let a = oracle.predict(&s)?;
            s = world.step(&s, a, &mut rng as &mut dyn RngCore)?.next_state;
        }
    }
    Ok(())
}

/// Feature vectors of the first `n` non-terminal states visited by greedy
/// rollouts (repeats included, so frequent states weigh more).
pub fn rollout_dataset<O>(world: &GridWorld, oracle: &O, n: usize, seed: u64) -> Result<Vec<Vec<f64>>>
where
    O: PolicyOracle<GridState>,
{
    let mut out = Vec::with_capacity(n);
    greedy_rollouts(world, oracle, u64::MAX, seed, |s| {
        out.push(world.encode_features(s));
        out.len() < n
    })?;
    Ok(out)
}

/// Roll out the greedy policy, draw `cfg.n_states` distinct non-terminal
/// visited states uniformly, and emit one query per action the policy does
/// not choose there.
pub fn sample_factual_dataset<O>(world: &GridWorld, oracle: &O, cfg: &BenchmarkConfig) -> Result<Vec<FactualQuery<GridState>>>
where
    O: PolicyOracle<GridState>,
{
    cfg.validate()?;
    let mut seen = HashSet::new();
    let mut pool = Vec::new();
    greedy_rollouts(world, oracle, cfg.pool_episodes, cfg.seed, |s| {
        if seen.insert(s.clone()) {
            pool.push(s.clone());
        }
        true
    })?;
    if pool.is_empty() {
        return Err(Error::NoData("rollouts visited no non-terminal state"));
    }
    if pool.len() < cfg.n_states {
        log::warn!("only {} distinct states visited, fewer than the requested {}", pool.len(), cfg.n_states);
    }
    let mut rng = RngStream::new(cfg.seed, purpose::DATASET).derive(2).rng();
    let mut picked = sample(&mut rng, pool.len(), cfg.n_states.min(pool.len())).into_vec();
    picked.sort_unstable();

    let mut queries = Vec::new();
    for i in picked {
        let state = &pool[i];
        let chosen = oracle.predict(state)?;
        for &a in world.actions() {
            if a != chosen {
                queries.push(FactualQuery { id: queries.len(), state: state.clone(), desired: a });
            }
        }
    }
    Ok(queries)
}

pub fn write_dataset<E: FeatureSpace>(env: &E, queries: &[FactualQuery<E::State>], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for q in queries {
        let line = QueryLine { id: q.id, features: int_features(&env.encode_features(&q.state)), action: q.desired.index };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<E: FeatureSpace>(env: &E, path: &Path) -> Result<Vec<FactualQuery<E::State>>> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QueryLine = serde_json::from_str(&line)?;
        let f: Vec<f64> = q.features.iter().map(|&v| v as f64).collect();
        let state = env.decode_features(&f).ok_or_else(|| Error::Invalid(format!("query {} is not a legal state", q.id)))?;
        out.push(FactualQuery { id: q.id, state, desired: env.action(q.action)? });
    }
    Ok(out)
}

/// A path found in the execution tree, with the state and rewards it led to.
#[derive(Clone, Debug)]
pub struct Located<S> {
    pub actions: ActionSequence,
    pub rewards: Vec<f64>,
    pub state: S,
}

/// Breadth-first expansion of every action sequence up to length `k`,
/// drawing `samples` successors per (state, action). Returns the shortest
/// sequence that reaches a non-terminal state with features `target`.
pub fn locate_in_execution_tree<E: FeatureSpace>(
    env: &E,
    start: &E::State,
    target: &[f64],
    k: usize,
    samples: u32,
    stream: RngStream,
) -> Result<Option<Located<E::State>>> {
    if k == 0 {
        return Err(config_err("k must be at least 1"));
    }
    if samples == 0 {
        return Err(config_err("samples must be at least 1"));
    }
    if env.is_terminal(start) {
        return Ok(None);
    }
    if env.encode_features(start) == target {
        return Ok(Some(Located { actions: ActionSequence::empty(), rewards: Vec::new(), state: start.clone() }));
    }
    let mut frontier = vec![Located { actions: ActionSequence::empty(), rewards: Vec::new(), state: start.clone() }];
    for depth in 1..=k {
        let mut next = Vec::new();
        let mut seen = HashSet::new();
        for node in &frontier {
            if env.is_terminal(&node.state) {
                continue;
            }
            let path_hash = hash_indices(node.actions.indices().into_iter().map(|i| i as u64));
            for &a in env.actions() {
                for s in 0..samples {
                    let mut rng = stream.derive_all(&[depth as u64, path_hash, a.index as u64, s as u64]).rng();
                    let t = env.step(&node.state, a, &mut rng as &mut dyn RngCore)?;
                    if !seen.insert(t.next_state.clone()) {
                        continue;
                    }
                    let mut actions = node.actions.clone();
                    actions.0.push(a);
                    let mut rewards = node.rewards.clone();
                    rewards.push(t.reward);
                    let found = !t.terminal && env.encode_features(&t.next_state) == target;
                    let child = Located { actions, rewards, state: t.next_state };
                    if found {
                        return Ok(Some(child));
                    }
                    next.push(child);
                }
            }
        }
        frontier = next;
    }
    Ok(None)
}

/// One row of the results file. Worst-case placeholders (1.0 for each
/// normalized RL property) stand in when no path to the counterfactual is
/// known; feature-based fields are empty when nothing was generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub query_id: usize,
    pub method: Method,
    pub state: String,
    pub desired: String,
    pub generated: bool,
    /// A path to the counterfactual is known (always true for tree search).
    pub located: bool,
    pub counterfactual: Option<String>,
    pub actions: Option<String>,
    pub reachability: f64,
    pub cost: f64,
    pub uncertainty: f64,
    pub proximity: Option<f64>,
    pub sparsity: Option<u32>,
    pub dmc: Option<f64>,
    pub raccer_loss: f64,
    pub baseline_loss: Option<f64>,
    pub wall_ms: Option<u64>,
}

fn fmt_features(f: &[f64]) -> String {
    let v = int_features(f);
    format!("{v:?}")
}

/// Per-query seed so a record does not depend on which other queries ran.
pub fn query_seed(seed: u64, id: usize) -> u64 {
    splitmix64(seed ^ splitmix64(id as u64 + 1))
}

/// Score a method's output on all six properties.
#[allow(clippy::too_many_arguments)]
pub fn score_counterfactual<E, O>(
    engine: Engine<'_, E, O>,
    query: &FactualQuery<E::State>,
    method: Method,
    cf: Option<&Counterfactual<E::State>>,
    search_cfg: &SearchConfig,
) -> Result<BenchmarkRecord>
where
    E: FeatureSpace,
    O: PolicyOracle<E::State>,
{
    let env = engine.env;
    let w = &search_cfg.weights;
    let mut rec = BenchmarkRecord {
        query_id: query.id,
        method,
        state: fmt_features(&env.encode_features(&query.state)),
        desired: query.desired.label.to_string(),
        generated: false,
        located: false,
        counterfactual: None,
        actions: None,
        reachability: 1.0,
        cost: 1.0,
        uncertainty: 1.0,
        proximity: None,
        sparsity: None,
        dmc: None,
        raccer_loss: worst_raccer_loss(w),
        baseline_loss: None,
        wall_ms: None,
    };
    let Some(cf) = cf else {
        return Ok(rec);
    };
    rec.generated = true;
    let cf_features = env.encode_features(&cf.state);
    rec.counterfactual = Some(fmt_features(&cf_features));

    let props = match method {
        Method::Raccer | Method::BoTs => Some((cf.actions.clone(), cf.properties)),
        Method::BoGen => {
            let stream = RngStream::new(search_cfg.seed, purpose::LOCATE);
            match locate_in_execution_tree(env, &query.state, &cf_features, search_cfg.max_actions, search_cfg.samples, stream)? {
                Some(found) => {
                    let (pv, _) = engine.properties(
                        &query.state,
                        &found.actions,
                        &found.rewards,
                        &cf.state,
                        query.desired,
                        search_cfg.max_actions,
                        search_cfg.simulations,
                        certainty_stream(search_cfg.seed, &found.actions),
                        None,
                    )?;
                    Some((found.actions, pv))
                }
                None => None,
            }
        }
    };
    let pv = match props {
        Some((actions, pv)) => {
            rec.located = true;
            rec.actions = Some(actions.labels().join(" "));
            rec.reachability = pv.reachability;
            rec.cost = pv.cost;
            rec.uncertainty = pv.uncertainty;
            rec.raccer_loss = raccer_loss(&pv, w);
            pv
        }
        None => cf.properties,
    };
    rec.proximity = Some(pv.proximity);
    rec.sparsity = Some(pv.sparsity);
    rec.dmc = Some(pv.dmc);
    rec.baseline_loss = Some(baseline_loss(pv.proximity, pv.sparsity as f64, pv.dmc, w));
    Ok(rec)
}

/// A method's counterfactual and, for the genetic search, its best-fitness history.
pub type Explained<S> = (Option<Counterfactual<S>>, Option<Vec<f64>>);

/// Run one method on one query.
pub fn explain<E, O>(
    engine: Engine<'_, E, O>,
    query: &FactualQuery<E::State>,
    method: Method,
    search_cfg: &SearchConfig,
    ga_cfg: &GaConfig,
) -> Result<Explained<E::State>>
where
    E: FeatureSpace,
    O: PolicyOracle<E::State>,
{
    Ok(match method {
        Method::Raccer => (search(engine, &query.state, query.desired, NodeLoss::Raccer, search_cfg)?.counterfactual, None),
        Method::BoTs => (search(engine, &query.state, query.desired, NodeLoss::Baseline, search_cfg)?.counterfactual, None),
        Method::BoGen => {
            let out = run_genetic(engine, &query.state, query.desired, &search_cfg.weights, ga_cfg)?;
            (out.counterfactual, Some(out.best_history))
        }
    })
}

/// Everything produced for one (query, method) pair.
#[derive(Clone, Debug)]
pub struct QueryResult<S> {
    pub record: BenchmarkRecord,
    pub counterfactual: Option<Counterfactual<S>>,
    /// Best-fitness history of the genetic search.
    pub ga_history: Option<Vec<f64>>,
}

/// Run every method on every query in parallel. Results come back in
/// (query, method) order and, apart from wall times, do not depend on the
/// number of workers.
pub fn run_benchmark<E, O>(
    engine: Engine<'_, E, O>,
    queries: &[FactualQuery<E::State>],
    methods: &[Method],
    search_cfg: &SearchConfig,
    ga_cfg: &GaConfig,
    timings: bool,
) -> Result<Vec<QueryResult<E::State>>>
where
    E: FeatureSpace,
    O: PolicyOracle<E::State>,
{
    search_cfg.validate()?;
    ga_cfg.validate()?;
    let jobs: Vec<(&FactualQuery<E::State>, Method)> = queries.iter().flat_map(|q| methods.iter().map(move |&m| (q, m))).collect();
    jobs.into_par_iter()
        .map(|(q, m)| {
            let seed = query_seed(search_cfg.seed, q.id);
            let scfg = SearchConfig { seed, ..search_cfg.clone() };
            let gcfg = GaConfig { seed, ..ga_cfg.clone() };
            let t0 = Instant::now();
            let (cf, ga_history) = explain(engine, q, m, &scfg, &gcfg)?;
            let elapsed = t0.elapsed().as_millis() as u64;
            let mut record = score_counterfactual(engine, q, m, cf.as_ref(), &scfg)?;
            if timings {
                record.wall_ms = Some(elapsed);
            }
            log::debug!("query {} {}: generated={}", q.id, m, record.generated);
            Ok(QueryResult { record, counterfactual: cf, ga_history })
        })
        .collect()
}

/// Per-method row of the summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub queries: usize,
    pub generated: usize,
    pub generation_rate: f64,
    pub reachability: Option<f64>,
    pub cost: Option<f64>,
    pub uncertainty: Option<f64>,
    pub certainty: Option<f64>,
    pub proximity: Option<f64>,
    pub sparsity: Option<f64>,
    pub dmc: Option<f64>,
    pub raccer_loss: Option<f64>,
    pub baseline_loss: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Generation rate per method plus property means over generated
/// counterfactuals only. Methods appear in their canonical order.
pub fn aggregate(records: &[BenchmarkRecord]) -> Result<Vec<MethodSummary>> {
    if records.is_empty() {
        return Err(Error::NoData("no benchmark records to aggregate"));
    }
    let mut by_method: HashMap<Method, Vec<&BenchmarkRecord>> = HashMap::new();
    for r in records {
        by_method.entry(r.method).or_default().push(r);
    }
    let mut out = Vec::new();
    for m in Method::ALL {
        let Some(rs) = by_method.get(&m) else { continue };
        let gen: Vec<&&BenchmarkRecord> = rs.iter().filter(|r| r.generated).collect();
        out.push(MethodSummary {
            method: m,
            queries: rs.len(),
            generated: gen.len(),
            generation_rate: 100.0 * gen.len() as f64 / rs.len() as f64,
            reachability: mean(gen.iter().map(|r| r.reachability)),
            cost: mean(gen.iter().map(|r| r.cost)),
            uncertainty: mean(gen.iter().map(|r| r.uncertainty)),
            certainty: mean(gen.iter().map(|r| 1.0 - r.uncertainty)),
            proximity: mean(gen.iter().filter_map(|r| r.proximity)),
            sparsity: mean(gen.iter().filter_map(|r| r.sparsity.map(f64::from))),
            dmc: mean(gen.iter().filter_map(|r| r.dmc)),
            raccer_loss: mean(gen.iter().map(|r| r.raccer_loss)),
            baseline_loss: mean(gen.iter().filter_map(|r| r.baseline_loss)),
        });
    }
    Ok(out)
}

/// Write rows as CSV, preceded by a `#` comment line carrying `provenance`.
pub fn write_csv<T: Serialize>(path: &Path, provenance: &str, rows: &[T]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in provenance.lines() {
        writeln!(file, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Loss weights used for the worst-case RL loss of a missing counterfactual.
pub fn worst_raccer_loss(w: &LossWeights) -> f64 {
    w.alpha + w.beta + w.gamma
}
