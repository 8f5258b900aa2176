#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use raccer::autoencoder::train_autoencoder;
use raccer::benchmark::rollout_dataset;
use raccer::policy::{read_policy, train_policy, write_policy, PolicyHeader};
use raccer::*;

pub fn world(deterministic: bool) -> GridWorld {
    let cfg = if deterministic { GridConfig::deterministic() } else { GridConfig::default() };
    GridWorld::new(cfg).unwrap()
}

fn cache_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name)
}

/// Default-trained policy, cached on disk across test binaries.
fn load_policy(deterministic: bool) -> TabularPolicy {
    let w = world(deterministic);
    let cfg = PolicyTrainConfig::default();
    let path = cache_path(&format!("policy-{}-{}.json", w.config().config_hash(), cfg.episodes));
    if let Ok((_, table)) = read_policy(&path) {
        return TabularPolicy::new(w, table);
    }
    let (table, _) = train_policy(&w, &cfg).unwrap();
    let header =
        PolicyHeader { env_config_hash: w.config().config_hash(), env_config: w.config().clone(), seed: cfg.seed, hyperparameters: cfg };
    let tmp = tempfile::NamedTempFile::new_in(env!("CARGO_TARGET_TMPDIR")).unwrap();
    write_policy(tmp.path(), &header, &table).unwrap();
    tmp.persist(&path).unwrap();
    // Reload so cached and fresh runs see the same quantized values.
    TabularPolicy::new(w, read_policy(&path).unwrap().1)
}

pub fn policy(deterministic: bool) -> &'static TabularPolicy {
    static STOCH: OnceLock<TabularPolicy> = OnceLock::new();
    static DET: OnceLock<TabularPolicy> = OnceLock::new();
    let cell = if deterministic { &DET } else { &STOCH };
    cell.get_or_init(|| load_policy(deterministic))
}

pub fn rollout_states(deterministic: bool) -> Vec<Vec<f64>> {
    rollout_dataset(&world(deterministic), policy(deterministic), 500, 0).unwrap()
}

fn load_autoencoder(deterministic: bool) -> MlpAutoencoder {
    let w = world(deterministic);
    let cfg = AutoencoderConfig::default();
    let path = cache_path(&format!("ae-{}-{}-{}.json", w.config().config_hash(), cfg.epochs, cfg.lr));
    if let Ok(m) = MlpAutoencoder::read(&path) {
        return m;
    }
    let (m, _) = train_autoencoder(&rollout_states(deterministic), &cfg).unwrap();
    let tmp = tempfile::NamedTempFile::new_in(env!("CARGO_TARGET_TMPDIR")).unwrap();
    m.write(tmp.path()).unwrap();
    tmp.persist(&path).unwrap();
    m
}

pub fn autoencoder(deterministic: bool) -> &'static MlpAutoencoder {
    static STOCH: OnceLock<MlpAutoencoder> = OnceLock::new();
    static DET: OnceLock<MlpAutoencoder> = OnceLock::new();
    let cell = if deterministic { &DET } else { &STOCH };
    cell.get_or_init(|| load_autoencoder(deterministic))
}

/// Distinct non-terminal states visited by greedy rollouts, in visit order.
pub fn visited_states(deterministic: bool, episodes: u64, seed: u64) -> Vec<GridState> {
    let cfg = raccer::benchmark::BenchmarkConfig { n_states: usize::MAX / 2, pool_episodes: episodes, seed, ..Default::default() };
    let qs = raccer::benchmark::sample_factual_dataset(&world(deterministic), policy(deterministic), &cfg).unwrap();
    let mut out: Vec<GridState> = Vec::new();
    for q in qs {
        if out.last() != Some(&q.state) {
            out.push(q.state);
        }
    }
    out
}
