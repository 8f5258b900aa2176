//! (mu + lambda) genetic search over integer feature vectors.
//!
//! Fitness is the feature-based baseline loss against the factual state.
//! Selection ranks individuals by constraint class first (feasible and valid,
//! then feasible only, then infeasible) and by fitness within a class, so the
//! best valid individual ever seen always survives.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{purpose, EnvAction, FeatureSpace, PolicyOracle, RngStream};
use crate::error::{config_err, Error, Result};
use crate::properties::{baseline_loss, raccer_loss, validity, ActionSequence, FeatureScorer, LossWeights, PropertyVector};
use crate::search::{Counterfactual, Engine, Method};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub mu: usize,
    pub lambda: usize,
    pub generations: usize,
    pub mutation_prob: f64,
    pub seed: u64,
    /// Extra feature indices held at the factual value.
    pub frozen: Vec<usize>,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self { mu: 100, lambda: 900, generations: 30, mutation_prob: 0.1, seed: 0, frozen: Vec::new() }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mu == 0 || self.lambda == 0 {
            return Err(config_err("mu and lambda must be positive"));
        }
        if self.generations == 0 {
            return Err(config_err("generations must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(config_err("mutation_prob must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn population(&self) -> usize {
        self.mu + self.lambda
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub features: Vec<i64>,
    /// Baseline loss; infinite when infeasible.
    pub fitness: f64,
    /// Passes game fidelity and actionability.
    pub feasible: bool,
    /// The oracle picks the desired action in the decoded state.
    pub valid: bool,
}

impl Individual {
    fn class(&self) -> u8 {
        match (self.feasible, self.valid) {
            (true, true) => 0,
            (true, false) => 1,
            _ => 2,
        }
    }

    fn rank_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.class().cmp(&other.class()).then(self.fitness.total_cmp(&other.fitness)).then_with(|| self.features.cmp(&other.features))
    }
}

/// Which components the operators may touch and their inclusive domains.
#[derive(Clone, Debug)]
pub struct Genome {
    pub domains: Vec<(i64, i64)>,
    pub mutable: Vec<bool>,
}

impl Genome {
    pub fn new<E: FeatureSpace>(env: &E, frozen: &[usize]) -> Self {
        let domains = env.feature_domains();
        let mut mutable = vec![true; domains.len()];
        for &i in env.immutable_features().iter().chain(frozen) {
            if i < mutable.len() {
                mutable[i] = false;
            }
        }
        Self { domains, mutable }
    }

    fn mutable_indices(&self) -> Vec<usize> {
        (0..self.mutable.len()).filter(|&i| self.mutable[i]).collect()
    }

    fn sample(&self, i: usize, rng: &mut ChaCha8Rng) -> i64 {
        let (lo, hi) = self.domains[i];
        rng.random_range(lo..=hi)
    }
}

/// Half the population are copies of `x` with one to three mutable
/// components resampled (the first is `x` itself), the other half uniform
/// random vectors that pass `feasible` where a sample can be found.
pub fn init_population(genome: &Genome, x: &[i64], size: usize, feasible: impl Fn(&[i64]) -> bool, rng: &mut ChaCha8Rng) -> Vec<Vec<i64>> {
    let free = genome.mutable_indices();
    let mut pop = Vec::with_capacity(size);
    if size == 0 {
        return pop;
    }
    pop.push(x.to_vec());
    let half = size.div_ceil(2);
    while pop.len() < half {
        let mut v = x.to_vec();
        if !free.is_empty() {
            let changes = rng.random_range(1..=3usize.min(free.len()));
            for _ in 0..changes {
                let i = free[rng.random_range(0..free.len())];
                v[i] = genome.sample(i, rng);
            }
        }
        pop.push(v);
    }
    while pop.len() < size {
        let mut v = x.to_vec();
        for _ in 0..100 {
            for &i in &free {
                v[i] = genome.sample(i, rng);
            }
            if feasible(&v) {
                break;
            }
        }
        pop.push(v);
    }
    pop
}

/// Resample each mutable component with probability `p`.
pub fn mutate(genome: &Genome, ind: &[i64], p: f64, rng: &mut ChaCha8Rng) -> Vec<i64> {
    let mut v = ind.to_vec();
    for (i, x) in v.iter_mut().enumerate() {
        if genome.mutable[i] && rng.random::<f64>() < p {
            *x = genome.sample(i, rng);
        }
    }
    v
}

/// Uniform crossover; immutable components always come from `a`.
pub fn crossover(genome: &Genome, a: &[i64], b: &[i64], rng: &mut ChaCha8Rng) -> Vec<i64> {
    a.iter().zip(b).enumerate().map(|(i, (&x, &y))| if genome.mutable[i] && rng.random::<bool>() { y } else { x }).collect()
}

#[derive(Clone, Debug)]
pub struct GeneticOutcome<S> {
    pub counterfactual: Option<Counterfactual<S>>,
    /// Best feasible-and-valid fitness after initialization and after each
    /// generation (infinite while none exists).
    pub best_history: Vec<f64>,
    pub evaluations: usize,
}

fn to_f64(v: &[i64]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Search directly in feature space for a counterfactual of `state`.
///
/// The returned counterfactual has an empty action sequence. Its RL
/// properties are set to the worst value (1.0) until the state is located in
/// an execution tree by the caller.
pub fn run_genetic<E, O>(
    engine: Engine<'_, E, O>,
    state: &E::State,
    desired: EnvAction,
    weights: &LossWeights,
    cfg: &GaConfig,
) -> Result<GeneticOutcome<E::State>>
where
    E: FeatureSpace,
    O: PolicyOracle<E::State>,
{
    cfg.validate()?;
    let env = engine.env;
    if env.is_terminal(state) {
        return Err(Error::Terminal("cannot explain a terminal state"));
    }
    let fx = env.encode_features(state);
    let x: Vec<i64> = fx.iter().map(|&v| v as i64).collect();
    let scorer = FeatureScorer::new(engine.autoencoder, &fx)?;
    let genome = Genome::new(env, &cfg.frozen);
    let mut rng = RngStream::new(cfg.seed, purpose::GENETIC).rng();

    let mut cache: HashMap<Vec<i64>, Individual> = HashMap::new();
    let mut evaluate = |v: Vec<i64>| -> Result<Individual> {
        if let Some(ind) = cache.get(&v) {
            return Ok(ind.clone());
        }
        let f = to_f64(&v);
        let decoded = env.check_actionability(&fx, &f).then(|| env.decode_features(&f)).flatten();
        let ind = match decoded {
            Some(s) => {
                let valid = !env.is_terminal(&s) && validity(engine.oracle, &s, desired);
                Individual { fitness: scorer.loss(&f, weights)?, feasible: true, valid, features: v.clone() }
            }
            None => Individual { fitness: f64::INFINITY, feasible: false, valid: false, features: v.clone() },
        };
        cache.insert(v, ind.clone());
        Ok(ind)
    };

    let feasible = |v: &[i64]| {
        let f = to_f64(v);
        env.check_actionability(&fx, &f) && env.check_game_fidelity(&f)
    };
    let initial = init_population(&genome, &x, cfg.population(), feasible, &mut rng);
    let mut population = initial.into_iter().map(&mut evaluate).collect::<Result<Vec<_>>>()?;
    let mut history = Vec::with_capacity(cfg.generations + 1);

    let select = |pop: &mut Vec<Individual>| {
        pop.sort_by(Individual::rank_cmp);
        pop.dedup_by(|a, b| a.features == b.features);
        pop.truncate(cfg.mu);
    };
    let best_valid = |pop: &[Individual]| pop.first().filter(|i| i.class() == 0).map_or(f64::INFINITY, |i| i.fitness);

    select(&mut population);
    history.push(best_valid(&population));
    for _ in 0..cfg.generations {
        let mut offspring = Vec::with_capacity(cfg.lambda);
        for _ in 0..cfg.lambda {
            let a = &population[rng.random_range(0..population.len())].features;
            let b = &population[rng.random_range(0..population.len())].features;
            let child = crossover(&genome, a, b, &mut rng);
            let child = mutate(&genome, &child, cfg.mutation_prob, &mut rng);
            offspring.push(evaluate(child)?);
        }
        population.extend(offspring);
        select(&mut population);
        history.push(best_valid(&population));
    }
    let evaluations = cache.len();

    let best = population.into_iter().next().filter(|i| i.class() == 0);
    let counterfactual = match best {
        Some(ind) => {
            let f = to_f64(&ind.features);
            let cf_state = env.decode_features(&f).ok_or(Error::Invalid("feasible individual failed to decode".into()))?;
            let (proximity, sparsity, dmc) = scorer.score(&f)?;
            let properties = PropertyVector { reachability: 1.0, cost: 1.0, uncertainty: 1.0, proximity, sparsity, dmc };
            Some(Counterfactual {
                state: cf_state,
                actions: ActionSequence::empty(),
                raccer_loss: raccer_loss(&properties, weights),
                baseline_loss: baseline_loss(proximity, sparsity as f64, dmc, weights),
                properties,
                certainty: None,
                method: Method::BoGen,
            })
        }
        None => None,
    };
    Ok(GeneticOutcome { counterfactual, best_history: history, evaluations })
}
