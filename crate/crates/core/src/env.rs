//! Environment and policy-oracle abstractions.
//!
//! Everything downstream (search, scoring, benchmarking) is written against
//! [`Environment`], [`FeatureSpace`] and [`PolicyOracle`] so the engine never
//! looks inside the policy it explains.

use std::fmt;
use std::hash::Hash;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A discrete environment action.
///
/// Equality and ordering only look at `index`; the label is for display.
#[derive(Clone, Copy, Debug, Eq, Serialize)]
pub struct EnvAction {
    pub index: usize,
    #[serde(skip)]
    pub label: &'static str,
}

impl EnvAction {
    pub const fn new(index: usize, label: &'static str) -> Self {
        Self { index, label }
    }
}

impl PartialEq for EnvAction {
    fn eq(&self, other: &Self) -> bool {
        self.index == other.index
    }
}

impl Hash for EnvAction {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.index.hash(state);
    }
}

impl PartialOrd for EnvAction {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EnvAction {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.index.cmp(&other.index)
    }
}

impl fmt::Display for EnvAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label)
    }
}

/// Result of a single environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition<S> {
    pub next_state: S,
    pub reward: f64,
    pub terminal: bool,
}

/// Reproducible random stream identified by `(seed, stream)`.
///
/// Sub-streams are derived by mixing a tag into the stream id, so a query can
/// hand out independent streams per purpose (expansion, certainty simulation,
/// selection) without sharing generator state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub const fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Derive a child stream; `(self, tag)` uniquely determines the result.
    pub fn derive(&self, tag: u64) -> Self {
        Self { seed: self.seed, stream: splitmix64(self.stream ^ splitmix64(tag.wrapping_add(0x9E37_79B9_7F4A_7C15))) }
    }

    /// Derive along a path of tags.
    pub fn derive_all(&self, tags: &[u64]) -> Self {
        tags.iter().fold(*self, |s, t| s.derive(*t))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Purpose tags for [`RngStream::derive`].
pub mod purpose {
    pub const EXPAND: u64 = 1;
    pub const CERTAINTY: u64 = 2;
    pub const SELECT: u64 = 3;
    pub const GENETIC: u64 = 4;
    pub const LOCATE: u64 = 5;
    pub const DATASET: u64 = 6;
    pub const TRAIN: u64 = 7;
    pub const INIT: u64 = 8;
    pub const SIMULATE: u64 = 9;
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stable 64-bit digest of a sequence of small integers (action paths, feature keys).
pub fn hash_indices<I: IntoIterator<Item = u64>>(items: I) -> u64 {
    items.into_iter().fold(0xCBF2_9CE4_8422_2325, |h, x| splitmix64(h ^ x).rotate_left(17))
}

/// A discrete-action, fully observable environment with value-semantics states.
pub trait Environment: Sync {
    type State: Clone + Eq + Hash + fmt::Debug + Send + Sync;

    /// The full, fixed action set ordered by index.
    fn actions(&self) -> &[EnvAction];

    fn is_terminal(&self, state: &Self::State) -> bool;

    /// Legal actions in index order; empty for terminal states.
    fn legal_actions(&self, state: &Self::State) -> Vec<EnvAction>;

    /// Sample a successor. Never mutates `state`.
    fn step(&self, state: &Self::State, action: EnvAction, rng: &mut dyn RngCore) -> Result<Transition<Self::State>>;

    /// Magnitude of the per-step penalty, used to normalize cost.
    fn reward_scale(&self) -> f64;

    fn action_by_name(&self, name: &str) -> Option<EnvAction> {
        self.actions().iter().copied().find(|a| a.label.eq_ignore_ascii_case(name))
    }

    fn action(&self, index: usize) -> Result<EnvAction> {
        self.actions().get(index).copied().ok_or(Error::ActionOutOfRange { index, count: self.actions().len() })
    }
}

/// Fixed-length numeric view of states, used by the feature-based baselines.
pub trait FeatureSpace: Environment {
    fn feature_len(&self) -> usize;

    fn encode_features(&self, state: &Self::State) -> Vec<f64>;

    /// Rebuild a state from features, or `None` if they break the game rules.
    fn decode_features(&self, features: &[f64]) -> Option<Self::State>;

    /// Inclusive integer domain of each feature component.
    fn feature_domains(&self) -> Vec<(i64, i64)>;

    /// Indices of features that may never change.
    fn immutable_features(&self) -> &[usize];

    fn check_game_fidelity(&self, features: &[f64]) -> bool {
        self.decode_features(features).is_some()
    }

    fn check_actionability(&self, original: &[f64], candidate: &[f64]) -> bool {
        original.len() == candidate.len() && self.immutable_features().iter().all(|&i| original[i] == candidate[i])
    }
}

/// Black-box decision model being explained. Deterministic in the state.
pub trait PolicyOracle<S>: Sync {
    fn predict(&self, state: &S) -> Result<EnvAction>;
}

impl<S, P: PolicyOracle<S> + ?Sized> PolicyOracle<S> for &P {
    fn predict(&self, state: &S) -> Result<EnvAction> {
        (**self).predict(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_stream_same_draws() {
        let s = RngStream::new(7, 3);
        let a: Vec<u64> = (0..8).map(|_| 0).scan(s.rng(), |r, _: u64| Some(r.random())).collect();
        let b: Vec<u64> = (0..8).map(|_| 0).scan(s.rng(), |r, _: u64| Some(r.random())).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn derived_streams_differ() {
        let s = RngStream::new(7, 0);
        assert_ne!(s.derive(1), s.derive(2));
        assert_ne!(s.derive(1).derive(2), s.derive(2).derive(1));
        let x: u64 = s.derive(1).rng().random();
        let y: u64 = s.derive(2).rng().random();
        assert_ne!(x, y);
    }

    #[test]
    fn action_identity_is_index() {
        assert_eq!(EnvAction::new(3, "A"), EnvAction::new(3, "B"));
        assert!(EnvAction::new(1, "Z") < EnvAction::new(2, "A"));
    }
}
