//! Loading trained models and turning user input into states.

use anyhow::{bail, Context};
use raccer::policy::read_policy;
use raccer::*;

/// Everything needed to answer queries: environment, black box and autoencoder.
#[derive(Debug)]
pub struct Models {
    pub world: GridWorld,
    pub policy: TabularPolicy,
    pub autoencoder: MlpAutoencoder,
}

impl Models {
    /// Load the policy and autoencoder named in `cfg`, refusing a policy
    /// trained on a different environment.
    pub fn load(cfg: &RunConfig) -> anyhow::Result<Self> {
        let world = GridWorld::new(cfg.env.clone())?;
        let (header, table) = read_policy(&cfg.paths.policy)
            .with_context(|| format!("cannot load policy {} (run `raccer train` first)", cfg.paths.policy.display()))?;
        if header.env_config_hash != cfg.env.config_hash() {
            bail!(
                "policy {} was trained on environment {} but the configuration describes {}",
                cfg.paths.policy.display(),
                header.env_config_hash,
                cfg.env.config_hash()
            );
        }
        let autoencoder = MlpAutoencoder::read(&cfg.paths.autoencoder)
            .with_context(|| format!("cannot load autoencoder {}", cfg.paths.autoencoder.display()))?;
        if autoencoder.input_dim() != world.feature_len() {
            bail!("autoencoder expects {} features, environment has {}", autoencoder.input_dim(), world.feature_len());
        }
        let policy = TabularPolicy::new(world.clone(), table);
        Ok(Self { world, policy, autoencoder })
    }

    pub fn engine(&self) -> Engine<'_, GridWorld, TabularPolicy> {
        Engine::new(&self.world, &self.policy, &self.autoencoder)
    }

    /// Validate integer features and decode them into a state.
    pub fn state(&self, features: &[i64]) -> anyhow::Result<GridState> {
        if features.len() != self.world.feature_len() {
            bail!("expected {} features, got {}", self.world.feature_len(), features.len());
        }
        let f: Vec<f64> = features.iter().map(|&v| v as f64).collect();
        match self.world.decode(&f) {
            Some(s) => Ok(s),
            None => bail!("features {features:?} do not describe a legal gridworld state"),
        }
    }

    pub fn action(&self, name: &str) -> anyhow::Result<EnvAction> {
        match self.world.action_by_name(name) {
            Some(a) => Ok(a),
            None => {
                let names: Vec<&str> = self.world.actions().iter().map(|a| a.label).collect();
                bail!("unknown action {name:?}; expected one of {}", names.join(", "))
            }
        }
    }
}

/// Parse features written as `[4,0,0,2,0,0,2,0,0]`, `4,0,0,...` or
/// whitespace separated.
pub fn parse_state_spec(spec: &str) -> anyhow::Result<Vec<i64>> {
    let inner = spec.trim().trim_start_matches('[').trim_end_matches(']');
    let parts: Vec<&str> = inner.split(|c: char| c == ',' || c.is_whitespace()).filter(|p| !p.is_empty()).collect();
    if parts.is_empty() {
        bail!("empty state specification");
    }
    parts.iter().map(|p| p.parse::<i64>().with_context(|| format!("{p:?} is not an integer feature"))).collect()
}

pub fn features(world: &GridWorld, s: &GridState) -> Vec<i64> {
    world.features(s).iter().map(|&v| v as i64).collect()
}

pub fn render_lines(world: &GridWorld, s: &GridState) -> Vec<String> {
    world.render(s).lines().map(str::to_string).collect()
}
