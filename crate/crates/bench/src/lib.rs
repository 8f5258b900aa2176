//! Fixtures shared by the benchmarks: a quickly trained policy and
//! autoencoder, plus a handful of factual queries.

use raccer::autoencoder::train_autoencoder;
use raccer::benchmark::{rollout_dataset, sample_factual_dataset, BenchmarkConfig, FactualQuery};
use raccer::policy::train_policy;
use raccer::*;

pub struct Fixture {
    pub world: GridWorld,
    pub policy: TabularPolicy,
    pub autoencoder: MlpAutoencoder,
    pub queries: Vec<FactualQuery<GridState>>,
}

impl Fixture {
    /// Models small enough to train in a few seconds. Timings depend on
    /// table and tree sizes, not on policy quality.
    pub fn new() -> Result<Self> {
        let world = GridWorld::new(GridConfig::default())?;
        let (table, _) = train_policy(&world, &PolicyTrainConfig { episodes: 300_000, ..Default::default() })?;
        let policy = TabularPolicy::new(world.clone(), table);
        let data = rollout_dataset(&world, &policy, 500, 0)?;
        let (autoencoder, _) = train_autoencoder(&data, &AutoencoderConfig { epochs: 2_000, ..Default::default() })?;
        let queries = sample_factual_dataset(&world, &policy, &BenchmarkConfig { n_states: 10, pool_episodes: 100, ..Default::default() })?;
        Ok(Self { world, policy, autoencoder, queries })
    }

    pub fn engine(&self) -> Engine<'_, GridWorld, TabularPolicy> {
        Engine::new(&self.world, &self.policy, &self.autoencoder)
    }
}
