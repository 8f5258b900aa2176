//! Run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::AutoencoderConfig;
use crate::benchmark::BenchmarkConfig;
use crate::error::{config_err, Result};
use crate::genetic::GaConfig;
use crate::gridworld::GridConfig;
use crate::policy::PolicyTrainConfig;
use crate::search::{Method, SearchConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub port: u16,
    /// Wall-clock budget for one explain request.
    pub explain_budget_ms: u64,
    /// Origin allowed by CORS; any origin when unset.
    pub allowed_origin: Option<String>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { port: 8080, explain_budget_ms: 30_000, allowed_origin: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Environment TOML file; replaces the inline `[env]` table when set.
    pub env_config: Option<PathBuf>,
    pub policy: PathBuf,
    pub autoencoder: PathBuf,
    /// Directory for benchmark datasets, records and summaries.
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            env_config: None,
            policy: "models/policy.json".into(),
            autoencoder: "models/autoencoder.json".into(),
            output: "results".into(),
        }
    }
}

/// Everything a run depends on. The master `seed` is copied into every
/// section by [`RunConfig::resolve`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub method: Method,
    pub paths: Paths,
    pub env: GridConfig,
    pub policy: PolicyTrainConfig,
    pub autoencoder: AutoencoderConfig,
    pub search: SearchConfig,
    pub genetic: GaConfig,
    pub benchmark: BenchmarkConfig,
    pub serve: ServeConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Load the external env file if one is named, propagate the master
    /// seed, and validate every section.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(p) = &self.paths.env_config {
            let text = std::fs::read_to_string(p).map_err(|e| config_err(format!("cannot read env config {}: {e}", p.display())))?;
            self.env = GridConfig::from_toml_str(&text)?;
        }
        self.policy.seed = self.seed;
        self.autoencoder.seed = self.seed;
        self.search.seed = self.seed;
        self.genetic.seed = self.seed;
        self.benchmark.seed = self.seed;
        self.env.validate()?;
        self.policy.validate()?;
        self.search.validate()?;
        self.genetic.validate()?;
        self.benchmark.validate()?;
        self.search.weights.validate()?;
        Ok(self)
    }

    /// Settings that determine results, without output locations, as JSON.
    pub fn provenance(&self) -> String {
        let mut echo = self.clone();
        echo.paths.output = PathBuf::new();
        echo.serve = ServeConfig::default();
        serde_json::to_string(&echo).expect("config serializes")
    }

    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.provenance().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
