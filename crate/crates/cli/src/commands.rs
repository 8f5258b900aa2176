//! The `train`, `explain` and `benchmark` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use raccer::autoencoder::train_autoencoder;
use raccer::benchmark::{
    aggregate, rollout_dataset, run_benchmark, sample_factual_dataset, write_csv, write_dataset, BenchmarkRecord, MethodSummary,
};
use raccer::policy::{read_policy, rollout_success_rate, train_policy, PolicyHeader};
use raccer::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::explain::{explain, Explanation};
use crate::models::{parse_state_spec, Models};

/// Flags shared by every subcommand that can override the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub port: Option<u16>,
}

/// Read the config file (defaults when absent), apply flag overrides and
/// validate.
pub fn load_config(path: Option<&Path>, o: &Overrides) -> anyhow::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(m) = o.method {
        cfg.method = m;
    }
    if let Some(p) = o.port {
        cfg.serve.port = p;
    }
    Ok(cfg.resolve()?)
}

/// Run `f` on a rayon pool capped at `jobs` workers, or the global pool.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    match jobs {
        Some(0) => bail!("--jobs must be at least 1"),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
        None => Ok(f()),
    }
}

fn file_digest(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainTarget {
    Both,
    Policy,
    Autoencoder,
}

/// Train the requested models. With `out`, models go to `out/policy.json`
/// and `out/autoencoder.json`; otherwise to the configured paths.
pub fn cmd_train(mut cfg: RunConfig, out: Option<&Path>, target: TrainTarget) -> anyhow::Result<PathBuf> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        cfg.paths.policy = dir.join("policy.json");
        cfg.paths.autoencoder = dir.join("autoencoder.json");
    }
    for p in [&cfg.paths.policy, &cfg.paths.autoencoder] {
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
        }
    }
    let world = GridWorld::new(cfg.env.clone())?;
    let mut report = json!({ "config_hash": cfg.config_hash(), "config": serde_json::from_str::<serde_json::Value>(&cfg.provenance())? });

    let table = if target == TrainTarget::Autoencoder {
        let (header, table) = read_policy(&cfg.paths.policy)
            .with_context(|| format!("the autoencoder is trained on policy rollouts; cannot load {}", cfg.paths.policy.display()))?;
        if header.env_config_hash != cfg.env.config_hash() {
            bail!("policy {} was trained on a different environment", cfg.paths.policy.display());
        }
        table
    } else {
        log::info!("training policy for {} episodes", cfg.policy.episodes);
        let (table, tr) = train_policy(&world, &cfg.policy)?;
        let header = PolicyHeader {
            env_config_hash: cfg.env.config_hash(),
            env_config: cfg.env.clone(),
            seed: cfg.seed,
            hyperparameters: cfg.policy,
        };
        raccer::policy::write_policy(&cfg.paths.policy, &header, &table)?;
        let success = rollout_success_rate(&world, &table, 1000, cfg.seed ^ 0x5EED);
        log::info!("policy written to {}; greedy success rate {success:.3}", cfg.paths.policy.display());
        report["policy"] = json!({
            "path": cfg.paths.policy,
            "episodes": tr.episodes,
            "table_entries": tr.table_entries,
            "greedy_success_rate": success,
            "return_curve": tr.return_curve.iter().step_by((tr.return_curve.len() / 100).max(1)).collect::<Vec<_>>(),
        });
        table
    };

    if target != TrainTarget::Policy {
        let policy = TabularPolicy::new(world.clone(), table);
        let data = rollout_dataset(&world, &policy, cfg.benchmark.autoencoder_states, cfg.seed)?;
        log::info!("training autoencoder on {} states for {} epochs", data.len(), cfg.autoencoder.epochs);
        let (ae, ar) = train_autoencoder(&data, &cfg.autoencoder)?;
        ae.write(&cfg.paths.autoencoder)?;
        log::info!("autoencoder written to {}; final mse {:.5}", cfg.paths.autoencoder.display(), ar.final_mse);
        report["autoencoder"] = json!({
            "path": cfg.paths.autoencoder,
            "states": data.len(),
            "final_mse": ar.final_mse,
            "loss_history": ar.loss_history.iter().step_by((ar.loss_history.len() / 100).max(1)).collect::<Vec<_>>(),
        });
    }

    let dir = cfg.paths.policy.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let report_path = dir.join("training_report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report_path)
}

/// What `raccer explain` prints.
#[derive(Clone, Debug, Serialize)]
pub struct ExplainOutput {
    /// "counterfactual found" or "no counterfactual found".
    pub status: &'static str,
    pub config_hash: String,
    pub explanation: Explanation,
}

/// Explain one query.
pub fn cmd_explain(cfg: &RunConfig, state_spec: &str, action: &str) -> anyhow::Result<ExplainOutput> {
    let features = parse_state_spec(state_spec)?;
    let models = Models::load(cfg)?;
    let state = models.state(&features)?;
    let desired = models.action(action)?;
    let e = explain(&models, &state, desired, cfg.method, &cfg.search, &cfg.genetic)?;
    Ok(ExplainOutput {
        status: if e.found { "counterfactual found" } else { "no counterfactual found" },
        config_hash: cfg.config_hash(),
        explanation: e,
    })
}

/// Paths of the files a benchmark run writes.
#[derive(Clone, Debug, Serialize)]
pub struct BenchmarkOutput {
    pub queries: PathBuf,
    pub records: PathBuf,
    pub summary: PathBuf,
    pub config: PathBuf,
    pub summaries: Vec<MethodSummary>,
}

/// Sample the factual dataset, run every method and write the results.
pub fn cmd_benchmark(
    cfg: &RunConfig,
    out: Option<&Path>,
    methods: Option<Vec<Method>>,
    jobs: Option<usize>,
    timings: bool,
) -> anyhow::Result<BenchmarkOutput> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.output.clone());
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let models = Models::load(cfg)?;
    let methods = methods.unwrap_or_else(|| cfg.benchmark.methods.clone());
    if methods.is_empty() {
        bail!("no methods selected");
    }
    let mut cfg = cfg.clone();
    cfg.benchmark.methods = methods.clone();
    let cfg = &cfg;
    let queries = sample_factual_dataset(&models.world, &models.policy, &cfg.benchmark)?;
    log::info!("{} queries over {} methods", queries.len(), methods.len());

    let provenance = format!(
        "config_hash={} policy_sha256={} autoencoder_sha256={}\nconfig={}",
        cfg.config_hash(),
        file_digest(&cfg.paths.policy)?,
        file_digest(&cfg.paths.autoencoder)?,
        cfg.provenance()
    );
    let results = with_jobs(jobs, || run_benchmark(models.engine(), &queries, &methods, &cfg.search, &cfg.genetic, timings))??;
    let records: Vec<BenchmarkRecord> = results.into_iter().map(|r| r.record).collect();
    let summaries = aggregate(&records)?;

    let o = BenchmarkOutput {
        queries: dir.join("queries.jsonl"),
        records: dir.join("records.csv"),
        summary: dir.join("summary.csv"),
        config: dir.join("config.toml"),
        summaries,
    };
    write_dataset(&models.world, &queries, &o.queries)?;
    write_csv(&o.records, &provenance, &records)?;
    write_csv(&o.summary, &provenance, &o.summaries)?;
    let toml_echo: String = provenance.lines().map(|l| format!("# {l}\n")).collect();
    fs::write(&o.config, toml_echo + &cfg.to_toml())?;
    Ok(o)
}

fn cell(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.3}"))
}

/// Fixed-width table of per-method results.
pub fn summary_table(rows: &[MethodSummary]) -> String {
    let mut s = format!(
        "{:<8} {:>7} {:>9} {:>9} {:>6} {:>9} {:>9} {:>9} {:>7} {:>9} {:>9}\n",
        "method", "queries", "generated", "reach", "cost", "certainty", "proximity", "sparsity", "dmc", "loss", "bo-loss"
    );
    for r in rows {
        s += &format!(
            "{:<8} {:>7} {:>8.1}% {:>9} {:>6} {:>9} {:>9} {:>9} {:>7} {:>9} {:>9}\n",
            r.method.name(),
            r.queries,
            r.generation_rate,
            cell(r.reachability),
            cell(r.cost),
            cell(r.certainty),
            cell(r.proximity),
            cell(r.sparsity),
            cell(r.dmc),
            cell(r.raccer_loss),
            cell(r.baseline_loss),
        );
    }
    s
}
