//! Tabular Q-learning policy served behind [`PolicyOracle`].

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::env::{purpose, EnvAction, Environment, FeatureSpace, PolicyOracle, RngStream};
use crate::error::{config_err, Error, Result};
use crate::gridworld::{GridConfig, GridState, GridWorld};

/// Canonical table key: the integer feature vector.
pub type StateKey = Vec<i16>;

pub fn state_key(features: &[f64]) -> StateKey {
    features.iter().map(|&v| v as i16).collect()
}

fn key_string(key: &[i16]) -> String {
    key.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_key(s: &str) -> Result<StateKey> {
    s.split(',').map(|p| p.trim().parse::<i16>().map_err(|e| Error::Invalid(format!("state key {s:?}: {e}")))).collect()
}

/// Action values per state. Unseen states read as all zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    n_actions: usize,
    values: HashMap<StateKey, Vec<f64>>,
}

impl QTable {
    pub fn new(n_actions: usize) -> Self {
        Self { n_actions, values: HashMap::new() }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, key: &[i16]) -> Option<&[f64]> {
        self.values.get(key).map(Vec::as_slice)
    }

    pub fn values_or_zero(&self, key: &[i16]) -> Vec<f64> {
        self.get(key).map_or_else(|| vec![0.0; self.n_actions], <[f64]>::to_vec)
    }

    pub fn entry(&mut self, key: StateKey) -> &mut Vec<f64> {
        let n = self.n_actions;
        self.values.entry(key).or_insert_with(|| vec![0.0; n])
    }

    pub fn insert(&mut self, key: StateKey, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n_actions {
            return Err(Error::Invalid(format!("value vector has {} entries, expected {}", values.len(), self.n_actions)));
        }
        self.values.insert(key, values);
        Ok(())
    }

    fn max_value(&self, key: &[i16]) -> f64 {
        self.get(key).map_or(0.0, |v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy action for `state` under `table`.
pub fn greedy_action<E: FeatureSpace>(env: &E, table: &QTable, state: &E::State) -> EnvAction {
    let key = state_key(&env.encode_features(state));
    let idx = table.get(&key).map_or(0, argmax);
    env.actions()[idx]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyTrainConfig {
    pub episodes: u64,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub seed: u64,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        Self { episodes: 4_000_000, alpha: 0.1, gamma: 0.95, epsilon_start: 1.0, epsilon_end: 0.05, seed: 0 }
    }
}

impl PolicyTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(config_err("alpha must lie in (0, 1]"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(config_err("gamma must lie in (0, 1]"));
        }
        for eps in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(config_err("epsilon schedule must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    fn epsilon(&self, episode: u64) -> f64 {
        if self.episodes <= 1 {
            return self.epsilon_end;
        }
        let frac = episode as f64 / (self.episodes - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub episodes: u64,
    /// Mean undiscounted episode return over consecutive blocks of 100 episodes.
    pub return_curve: Vec<f64>,
    pub table_entries: usize,
}

/// Epsilon-greedy tabular Q-learning over episodes started from
/// `sample_initial_state`.
pub fn train_policy(world: &GridWorld, cfg: &PolicyTrainConfig) -> Result<(QTable, TrainingReport)> {
    cfg.validate()?;
    let mut table = QTable::new(world.actions().len());
    let base = RngStream::new(cfg.seed, purpose::TRAIN);
    let mut rng = base.rng();
    let n_actions = world.actions().len();
    let mut curve = Vec::new();
    let mut block = 0.0;

    for ep in 0..cfg.episodes {
        let eps = cfg.epsilon(ep);
        let mut state = world.sample_initial_state(base.derive_all(&[purpose::INIT, ep]));
        let mut key = state_key(&world.features(&state));
        let mut ret = 0.0;
        while !state.terminal {
            let a = if rng.random::<f64>() < eps { rng.random_range(0..n_actions) } else { table.get(&key).map_or(0, argmax) };
            let t = world.step(&state, world.actions()[a], &mut rng as &mut dyn RngCore)?;
            ret += t.reward;
            let next_key = state_key(&world.features(&t.next_state));
            let bootstrap = if t.terminal { 0.0 } else { cfg.gamma * table.max_value(&next_key) };
            let q = &mut table.entry(key)[a];
            *q += cfg.alpha * (t.reward + bootstrap - *q);
            state = t.next_state;
            key = next_key;
        }
        block += ret;
        if (ep + 1) % 100 == 0 {
            curve.push(block / 100.0);
            block = 0.0;
        }
    }
    if !cfg.episodes.is_multiple_of(100) {
        curve.push(block / (cfg.episodes % 100) as f64);
    }
    // Model files store f32; quantize now so a reloaded table predicts identically.
    for v in table.values.values_mut() {
        for q in v.iter_mut() {
            *q = f64::from(*q as f32);
        }
    }
    let report = TrainingReport { episodes: cfg.episodes, return_curve: curve, table_entries: table.len() };
    Ok((table, report))
}

/// Fraction of episodes (from `sample_initial_state`) in which the greedy
/// policy shoots the dragon before the horizon.
pub fn rollout_success_rate(world: &GridWorld, table: &QTable, episodes: u64, seed: u64) -> f64 {
    let base = RngStream::new(seed, purpose::DATASET);
    let mut rng = base.derive(1).rng();
    let mut wins = 0u64;
    for ep in 0..episodes {
        let mut s = world.sample_initial_state(base.derive_all(&[purpose::INIT, ep]));
        while !s.terminal {
            let a = greedy_action(world, table, &s);
            let t = world.step(&s, a, &mut rng as &mut dyn RngCore).expect("legal action");
            if t.reward > 0.0 {
                wins += 1;
            }
            s = t.next_state;
        }
    }
    wins as f64 / episodes as f64
}

/// The trained black box: greedy over a Q-table.
#[derive(Debug)]
pub struct TabularPolicy {
    world: GridWorld,
    table: QTable,
    fallbacks: AtomicU64,
}

impl TabularPolicy {
    pub fn new(world: GridWorld, table: QTable) -> Self {
        Self { world, table, fallbacks: AtomicU64::new(0) }
    }

    pub fn table(&self) -> &QTable {
        &self.table
    }

    pub fn world(&self) -> &GridWorld {
        &self.world
    }

    pub fn action_values(&self, state: &GridState) -> Vec<f64> {
        self.table.values_or_zero(&state_key(&self.world.features(state)))
    }

    /// How many lookups hit an unseen state so far.
    pub fn fallback_count(&self) -> u64 {
        self.fallbacks.load(Ordering::Relaxed)
    }
}

impl PolicyOracle<GridState> for TabularPolicy {
    fn predict(&self, state: &GridState) -> Result<EnvAction> {
        if state.terminal {
            return Err(Error::Terminal("no action is defined in a terminal state"));
        }
        let key = state_key(&self.world.features(state));
        match self.table.get(&key) {
            Some(v) => Ok(self.world.actions()[argmax(v)]),
            None => {
                if self.fallbacks.fetch_add(1, Ordering::Relaxed) == 0 {
                    log::debug!("policy lookup fell back to zeros for unseen state {state}");
                }
                Ok(self.world.actions()[0])
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyHeader {
    pub env_config_hash: String,
    pub env_config: GridConfig,
    pub seed: u64,
    pub hyperparameters: PolicyTrainConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    header: PolicyHeader,
    n_actions: usize,
    entries: BTreeMap<String, Vec<f32>>,
}

/// Serialize a table with its provenance header. Entries are sorted by key so
/// the output is byte-stable.
pub fn write_policy(path: &Path, header: &PolicyHeader, table: &QTable) -> Result<()> {
    let entries = table.values.iter().map(|(k, v)| (key_string(k), v.iter().map(|&q| q as f32).collect())).collect::<BTreeMap<_, _>>();
    let file = PolicyFile { header: header.clone(), n_actions: table.n_actions, entries };
    let text = serde_json::to_string(&file)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_policy(path: &Path) -> Result<(PolicyHeader, QTable)> {
    let text = std::fs::read_to_string(path)?;
    let file: PolicyFile = serde_json::from_str(&text)?;
    let mut table = QTable::new(file.n_actions);
    for (k, v) in file.entries {
        table.insert(parse_key(&k)?, v.into_iter().map(f64::from).collect())?;
    }
    Ok((file.header, table))
}
