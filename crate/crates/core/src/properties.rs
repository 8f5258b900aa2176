//! Counterfactual property scorers and the two losses built from them.
//!
//! RL-specific properties (reachability, cost, stochastic uncertainty) are
//! normalized into `[0, 1]` with 0 as the best value, so the loss is
//! minimized with positive weights. Feature-based properties (proximity,
//! sparsity, data-manifold closeness) are raw non-negative distances.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{sq_dist, MlpAutoencoder};
use crate::env::{EnvAction, Environment, PolicyOracle, RngStream};
use crate::error::{config_err, Result};

/// Ordered actions that carry the factual state to a counterfactual.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct ActionSequence(pub Vec<EnvAction>);

impl ActionSequence {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn actions(&self) -> &[EnvAction] {
        &self.0
    }

    pub fn labels(&self) -> Vec<String> {
        self.0.iter().map(|a| a.label.to_string()).collect()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().map(|a| a.index).collect()
    }
}

impl fmt::Display for ActionSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.labels().join(" "))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PropertyVector {
    pub reachability: f64,
    pub cost: f64,
    /// One minus stochastic certainty.
    pub uncertainty: f64,
    pub proximity: f64,
    pub sparsity: u32,
    pub dmc: f64,
}

impl PropertyVector {
    pub fn certainty(&self) -> f64 {
        1.0 - self.uncertainty
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub theta0: f64,
    pub theta1: f64,
    pub theta2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 1.0, gamma: 1.0, theta0: 1.0, theta1: 1.0, theta2: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.theta0, self.theta1, self.theta2];
        if all.iter().all(|w| w.is_finite()) {
            Ok(())
        } else {
            Err(config_err("loss weights must be finite"))
        }
    }
}

/// `len / k`.
pub fn reachability_hat(len: usize, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(config_err("search budget k must be at least 1"));
    }
    Ok((len as f64 / k as f64).min(1.0))
}

/// Mean per-step cost of the path, relative to the per-step penalty
/// magnitude and clamped into `[0, 1]`.
pub fn cost_hat(rewards: &[f64], r_max: f64) -> f64 {
    if rewards.is_empty() {
        return 0.0;
    }
    let total: f64 = rewards.iter().sum();
    (-total / (rewards.len() as f64 * r_max)).clamp(0.0, 1.0)
}

pub fn raccer_loss(pv: &PropertyVector, w: &LossWeights) -> f64 {
    w.alpha * pv.reachability + w.beta * pv.cost + w.gamma * pv.uncertainty
}

pub fn baseline_loss(proximity: f64, sparsity: f64, dmc: f64, w: &LossWeights) -> f64 {
    w.theta0 * proximity + w.theta1 * sparsity + w.theta2 * dmc
}

/// Whether the oracle picks `desired` in `state`. Terminal states are never valid.
pub fn validity<S, O: PolicyOracle<S> + ?Sized>(oracle: &O, state: &S, desired: EnvAction) -> bool {
    oracle.predict(state).is_ok_and(|a| a == desired)
}

pub fn proximity(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b)
}

/// Number of differing components.
pub fn sparsity(a: &[f64], b: &[f64]) -> u32 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
}

/// One sampled execution of an action sequence.
#[derive(Clone, Debug)]
pub struct Unroll<S> {
    /// State after the last executed action.
    pub state: S,
    pub rewards: Vec<f64>,
    /// Set when a terminal state was hit before the sequence was exhausted.
    pub cut_short: bool,
}

impl<S> Unroll<S> {
    pub fn completed(&self) -> bool {
        !self.cut_short
    }
}

/// Execute `actions` from `start`, stopping at the first terminal state.
pub fn unroll<E: Environment>(env: &E, start: &E::State, actions: &[EnvAction], stream: RngStream) -> Result<Unroll<E::State>> {
    let mut rng = stream.rng();
    let mut state = start.clone();
    let mut rewards = Vec::with_capacity(actions.len());
    for (i, &a) in actions.iter().enumerate() {
        if env.is_terminal(&state) {
            return Ok(Unroll { state, rewards, cut_short: i < actions.len() });
        }
        let t = env.step(&state, a, &mut rng)?;
        rewards.push(t.reward);
        state = t.next_state;
    }
    Ok(Unroll { state, rewards, cut_short: false })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertaintyEstimate {
    pub successes: u32,
    pub simulations: u32,
}

impl CertaintyEstimate {
    pub fn value(&self) -> f64 {
        if self.simulations == 0 {
            0.0
        } else {
            self.successes as f64 / self.simulations as f64
        }
    }
}

/// Fraction of `n` seeded unrollings of `actions` from `start` that end in a
/// non-terminal state where the oracle picks `desired`. Simulation `i` uses
/// `stream.derive(i)`, so the estimate does not depend on evaluation order.
pub fn stochastic_certainty<E, O>(
    env: &E,
    oracle: &O,
    start: &E::State,
    actions: &[EnvAction],
    desired: EnvAction,
    n: u32,
    stream: RngStream,
) -> Result<CertaintyEstimate>
where
    E: Environment,
    O: PolicyOracle<E::State> + ?Sized,
{
    if n == 0 {
        return Err(config_err("number of certainty simulations must be at least 1"));
    }
    let mut successes = 0;
    for i in 0..n {
        let run = unroll(env, start, actions, stream.derive(i as u64))?;
        if run.completed() && !env.is_terminal(&run.state) && validity(oracle, &run.state, desired) {
            successes += 1;
        }
    }
    Ok(CertaintyEstimate { successes, simulations: n })
}

/// Feature-based properties relative to a fixed factual state.
#[derive(Clone, Debug)]
pub struct FeatureScorer<'a> {
    autoencoder: &'a MlpAutoencoder,
    factual: Vec<f64>,
    factual_latent: Vec<f64>,
}

impl<'a> FeatureScorer<'a> {
    pub fn new(autoencoder: &'a MlpAutoencoder, factual: &[f64]) -> Result<Self> {
        let factual_latent = autoencoder.encode(factual)?;
        Ok(Self { autoencoder, factual: factual.to_vec(), factual_latent })
    }

    pub fn factual(&self) -> &[f64] {
        &self.factual
    }

    /// `(proximity, sparsity, dmc)` of a candidate.
    pub fn score(&self, candidate: &[f64]) -> Result<(f64, u32, f64)> {
        let latent = self.autoencoder.encode(candidate)?;
        Ok((
            proximity(&self.factual_latent, &latent),
            sparsity(&self.factual, candidate),
            self.autoencoder.reconstruction_error(candidate)?,
        ))
    }

    pub fn loss(&self, candidate: &[f64], w: &LossWeights) -> Result<f64> {
        let (p, s, d) = self.score(candidate)?;
        Ok(baseline_loss(p, s as f64, d, w))
    }
}
