#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use raccer::RunConfig;
use raccer_cli::commands::{cmd_train, TrainTarget};

/// Small budgets so the command-line tests run in seconds.
pub const TINY: &str = r#"
seed = 3
[policy]
episodes = 200000
[autoencoder]
epochs = 500
[search]
iterations = 50
simulations = 20
[genetic]
generations = 5
[benchmark]
n_states = 3
pool_episodes = 50
"#;

pub fn tiny() -> RunConfig {
    RunConfig::from_toml_str(TINY).unwrap().resolve().unwrap()
}

/// Models trained once from [`TINY`] and cached across test binaries.
pub fn models_dir() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
        let dir = root.join(format!("cli-models-{}", tiny().config_hash()));
        if !dir.join("autoencoder.json").exists() {
            let tmp = tempfile::tempdir_in(&root).unwrap();
            cmd_train(tiny(), Some(tmp.path()), TrainTarget::Both).unwrap();
            // Another test binary may have won the race; either copy is identical.
            let kept = tmp.keep();
            if std::fs::rename(&kept, &dir).is_err() {
                let _ = std::fs::remove_dir_all(&kept);
            }
        }
        dir
    })
}

/// The tiny config pointing at the cached models, as TOML text.
pub fn config_toml(extra: &str) -> String {
    let d = models_dir();
    format!(
        "{TINY}\n[paths]\npolicy = {:?}\nautoencoder = {:?}\n{extra}",
        d.join("policy.json").display().to_string(),
        d.join("autoencoder.json").display().to_string()
    )
}

pub fn config(extra: &str) -> RunConfig {
    RunConfig::from_toml_str(&config_toml(extra)).unwrap().resolve().unwrap()
}
