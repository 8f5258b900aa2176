//! Stochastic GridWorld: shoot the dragon along a clear row or column.
//!
//! Trees live only in the middle column. They block movement and line of
//! sight, fall after enough CHOPs, and regrow on empty fertile cells with a
//! per-type probability after every step.

use std::fmt;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{EnvAction, Environment, FeatureSpace, RngStream, Transition};
use crate::error::{config_err, Error, Result};

pub const UP: EnvAction = EnvAction::new(0, "UP");
pub const DOWN: EnvAction = EnvAction::new(1, "DOWN");
pub const LEFT: EnvAction = EnvAction::new(2, "LEFT");
pub const RIGHT: EnvAction = EnvAction::new(3, "RIGHT");
pub const SHOOT: EnvAction = EnvAction::new(4, "SHOOT");
pub const CHOP: EnvAction = EnvAction::new(5, "CHOP");
pub const WAIT: EnvAction = EnvAction::new(6, "WAIT");

pub const ACTIONS: [EnvAction; 7] = [UP, DOWN, LEFT, RIGHT, SHOOT, CHOP, WAIT];

pub const SHOOT_REWARD: f64 = 10.0;
pub const STEP_PENALTY: f64 = -1.0;

/// Feature indices of the dragon position (the immutable features).
const DRAGON_FEATURES: [usize; 2] = [2, 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: u8,
    pub col: u8,
}

impl Cell {
    pub const fn new(row: u8, col: u8) -> Self {
        Self { row, col }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeType {
    /// CHOPs needed to fell a fresh tree of this type.
    pub max_hp: u8,
    /// Chance per step that an empty fertile cell grows this type.
    pub regrow_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub size: u8,
    pub horizon: u32,
    pub initial_tree_prob: f64,
    /// When set, a partly chopped tree heals to full hp as soon as the agent
    /// does anything other than chop it again.
    pub reset_on_interrupt: bool,
    pub tree_types: Vec<TreeType>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            size: 5,
            horizon: 50,
            initial_tree_prob: 0.5,
            reset_on_interrupt: false,
            tree_types: vec![
                TreeType { max_hp: 1, regrow_prob: 0.10 },
                TreeType { max_hp: 2, regrow_prob: 0.05 },
                TreeType { max_hp: 3, regrow_prob: 0.02 },
            ],
        }
    }
}

impl GridConfig {
    /// Same layout with regrowth switched off.
    pub fn deterministic() -> Self {
        let mut cfg = Self::default();
        for t in &mut cfg.tree_types {
            t.regrow_prob = 0.0;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 3 || self.size > 15 {
            return Err(config_err(format!("grid size {} outside 3..=15", self.size)));
        }
        if self.horizon == 0 {
            return Err(config_err("horizon must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.initial_tree_prob) {
            return Err(config_err("initial_tree_prob must lie in [0, 1]"));
        }
        if self.tree_types.is_empty() {
            return Err(config_err("at least one tree type is required"));
        }
        let mut total = 0.0;
        for t in &self.tree_types {
            if t.max_hp == 0 {
                return Err(config_err("tree max_hp must be at least 1"));
            }
            if !(0.0..=1.0).contains(&t.regrow_prob) {
                return Err(config_err("regrow_prob must lie in [0, 1]"));
            }
            total += t.regrow_prob;
        }
        if total > 1.0 + 1e-12 {
            return Err(config_err(format!("regrow probabilities sum to {total} > 1")));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Short digest identifying this configuration in model headers.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&canonical)[..8])
    }

    pub fn max_hp(&self) -> u8 {
        self.tree_types.iter().map(|t| t.max_hp).max().unwrap_or(0)
    }

    pub fn is_deterministic(&self) -> bool {
        self.tree_types.iter().all(|t| t.regrow_prob == 0.0)
    }
}

/// Concrete environment state.
///
/// `tree_max` and `chopping` are bookkeeping that the feature encoding does
/// not expose: the full hp of each standing tree (for healing) and the row of
/// the tree currently being chopped.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridState {
    pub agent: Cell,
    pub dragon: Cell,
    pub tree_hp: Vec<u8>,
    pub tree_max: Vec<u8>,
    pub chopping: Option<u8>,
    pub steps_elapsed: u32,
    pub terminal: bool,
}

impl GridState {
    /// Fresh state with every standing tree assumed to be of the smallest
    /// type that can hold its hp.
    pub fn new(world: &GridWorld, agent: Cell, dragon: Cell, tree_hp: Vec<u8>) -> Self {
        let tree_max = tree_hp.iter().map(|&hp| world.canonical_max(hp)).collect();
        Self { agent, dragon, tree_hp, tree_max, chopping: None, steps_elapsed: 0, terminal: false }
    }

    pub fn has_tree(&self, cell: Cell, mid: u8) -> bool {
        cell.col == mid && self.tree_hp[cell.row as usize] > 0
    }
}

/// The Stochastic GridWorld environment.
#[derive(Clone, Debug)]
pub struct GridWorld {
    config: GridConfig,
    immutable: [usize; 2],
}

impl GridWorld {
    pub fn new(config: GridConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, immutable: DRAGON_FEATURES })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn size(&self) -> u8 {
        self.config.size
    }

    pub fn mid(&self) -> u8 {
        self.config.size / 2
    }

    fn canonical_max(&self, hp: u8) -> u8 {
        if hp == 0 {
            return 0;
        }
        self.config.tree_types.iter().map(|t| t.max_hp).filter(|&m| m >= hp).min().unwrap_or(hp)
    }

    /// Agent and dragon on distinct free cells; each fertile cell starts with
    /// a tree of a uniformly chosen type with probability `initial_tree_prob`.
    pub fn sample_initial_state(&self, stream: RngStream) -> GridState {
        let mut rng = stream.rng();
        let n = self.config.size as usize;
        let mid = self.mid();
        let mut tree_hp = vec![0u8; n];
        let mut tree_max = vec![0u8; n];
        for r in 0..n {
            if rng.random::<f64>() < self.config.initial_tree_prob {
                let t = self.config.tree_types[rng.random_range(0..self.config.tree_types.len())];
                tree_hp[r] = t.max_hp;
                tree_max[r] = t.max_hp;
            }
        }
        let free: Vec<Cell> = (0..n as u8)
            .flat_map(|r| (0..n as u8).map(move |c| Cell::new(r, c)))
            .filter(|c| !(c.col == mid && tree_hp[c.row as usize] > 0))
            .collect();
        let a = rng.random_range(0..free.len());
        let mut d = rng.random_range(0..free.len() - 1);
        if d >= a {
            d += 1;
        }
        GridState { agent: free[a], dragon: free[d], tree_hp, tree_max, chopping: None, steps_elapsed: 0, terminal: false }
    }

    fn in_grid(&self, r: i32, c: i32) -> bool {
        let n = self.config.size as i32;
        (0..n).contains(&r) && (0..n).contains(&c)
    }

    /// Whether SHOOT from the current position would hit the dragon.
    pub fn has_clear_shot(&self, s: &GridState) -> bool {
        let (a, d) = (s.agent, s.dragon);
        let mid = self.mid();
        if a.row == d.row {
            let (lo, hi) = (a.col.min(d.col), a.col.max(d.col));
            !(lo < mid && mid < hi && s.tree_hp[a.row as usize] > 0)
        } else if a.col == d.col {
            if a.col != mid {
                return true;
            }
            let (lo, hi) = (a.row.min(d.row), a.row.max(d.row));
            ((lo + 1)..hi).all(|r| s.tree_hp[r as usize] == 0)
        } else {
            false
        }
    }

    /// Row of the tree a CHOP would hit: the orthogonal neighbour in the
    /// middle column with the lowest row index.
    pub fn chop_target(&self, s: &GridState) -> Option<u8> {
        let mid = self.mid() as i32;
        let (r, c) = (s.agent.row as i32, s.agent.col as i32);
        let mut candidates = [(r - 1, c), (r, c - 1), (r, c + 1), (r + 1, c)]
            .into_iter()
            .filter(|&(rr, cc)| cc == mid && self.in_grid(rr, cc) && s.tree_hp[rr as usize] > 0)
            .map(|(rr, _)| rr as u8)
            .collect::<Vec<_>>();
        candidates.sort_unstable();
        candidates.first().copied()
    }

    fn regrow(&self, s: &mut GridState, rng: &mut dyn RngCore) {
        let mid = self.mid();
        for r in 0..self.config.size {
            let cell = Cell::new(r, mid);
            if s.tree_hp[r as usize] > 0 || cell == s.agent || cell == s.dragon {
                continue;
            }
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for t in &self.config.tree_types {
                acc += t.regrow_prob;
                if u < acc {
                    s.tree_hp[r as usize] = t.max_hp;
                    s.tree_max[r as usize] = t.max_hp;
                    break;
                }
            }
        }
    }

    pub fn render(&self, s: &GridState) -> String {
        let mut out = String::new();
        let mid = self.mid();
        for r in 0..self.config.size {
            for c in 0..self.config.size {
                let cell = Cell::new(r, c);
                let ch = if cell == s.agent {
                    'A'
                } else if cell == s.dragon {
                    'D'
                } else if s.has_tree(cell, mid) {
                    char::from_digit(s.tree_hp[r as usize] as u32, 10).unwrap_or('T')
                } else {
                    '.'
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    /// Decode a length-`size + 4` integer feature vector, checking every
    /// structural rule of the game.
    pub fn decode(&self, f: &[f64]) -> Option<GridState> {
        let n = self.config.size as usize;
        if f.len() != n + 4 {
            return None;
        }
        if f.iter().any(|v| !v.is_finite() || v.fract() != 0.0) {
            return None;
        }
        let coord = |v: f64| (v >= 0.0 && v < n as f64).then_some(v as u8);
        let agent = Cell::new(coord(f[0])?, coord(f[1])?);
        let dragon = Cell::new(coord(f[2])?, coord(f[3])?);
        if agent == dragon {
            return None;
        }
        let max_hp = self.config.max_hp() as f64;
        let mut tree_hp = Vec::with_capacity(n);
        for &hp in &f[4..] {
            if hp < 0.0 || hp > max_hp {
                return None;
            }
            tree_hp.push(hp as u8);
        }
        let mid = self.mid();
        let state = GridState::new(self, agent, dragon, tree_hp);
        if state.has_tree(agent, mid) || state.has_tree(dragon, mid) {
            return None;
        }
        Some(state)
    }

    pub fn features(&self, s: &GridState) -> Vec<f64> {
        let mut v = Vec::with_capacity(4 + s.tree_hp.len());
        v.extend([s.agent.row, s.agent.col, s.dragon.row, s.dragon.col].map(f64::from));
        v.extend(s.tree_hp.iter().map(|&h| f64::from(h)));
        v
    }
}

impl Environment for GridWorld {
    type State = GridState;

    fn actions(&self) -> &[EnvAction] {
        &ACTIONS
    }

    fn is_terminal(&self, state: &GridState) -> bool {
        state.terminal
    }

    fn legal_actions(&self, state: &GridState) -> Vec<EnvAction> {
        if state.terminal {
            Vec::new()
        } else {
            ACTIONS.to_vec()
        }
    }

    fn step(&self, state: &GridState, action: EnvAction, rng: &mut dyn RngCore) -> Result<Transition<GridState>> {
        if state.terminal {
            return Err(Error::Terminal("gridworld step"));
        }
        if action.index >= ACTIONS.len() {
            return Err(Error::ActionOutOfRange { index: action.index, count: ACTIONS.len() });
        }
        let mid = self.mid();
        let mut next = state.clone();
        let mut reward = STEP_PENALTY;
        let mut chopped = None;

        match action.index {
            0..=3 => {
                let (dr, dc) = [(-1, 0), (1, 0), (0, -1), (0, 1)][action.index];
                let (r, c) = (state.agent.row as i32 + dr, state.agent.col as i32 + dc);
                if self.in_grid(r, c) {
                    let target = Cell::new(r as u8, c as u8);
                    if target != state.dragon && !state.has_tree(target, mid) {
                        next.agent = target;
                    }
                }
            }
            4 => {
                if self.has_clear_shot(state) {
                    next.terminal = true;
                    reward = SHOOT_REWARD;
                }
            }
            5 => {
                if let Some(r) = self.chop_target(state) {
                    let hp = &mut next.tree_hp[r as usize];
                    *hp -= 1;
                    if *hp == 0 {
                        next.tree_max[r as usize] = 0;
                    } else {
                        chopped = Some(r);
                    }
                }
            }
            _ => {}
        }

        if self.config.reset_on_interrupt {
            if let Some(prev) = state.chopping {
                if chopped != Some(prev) && next.tree_hp[prev as usize] > 0 {
                    next.tree_hp[prev as usize] = next.tree_max[prev as usize];
                }
            }
            next.chopping = chopped;
        }

        next.steps_elapsed += 1;
        if !next.terminal {
            self.regrow(&mut next, rng);
            if next.steps_elapsed >= self.config.horizon {
                next.terminal = true;
            }
        }
        let terminal = next.terminal;
        Ok(Transition { next_state: next, reward, terminal })
    }

    fn reward_scale(&self) -> f64 {
        STEP_PENALTY.abs()
    }
}

impl FeatureSpace for GridWorld {
    fn feature_len(&self) -> usize {
        self.config.size as usize + 4
    }

    fn encode_features(&self, state: &GridState) -> Vec<f64> {
        self.features(state)
    }

    fn decode_features(&self, features: &[f64]) -> Option<GridState> {
        self.decode(features)
    }

    fn feature_domains(&self) -> Vec<(i64, i64)> {
        let last = self.config.size as i64 - 1;
        let mut d = vec![(0, last); 4];
        d.extend(std::iter::repeat_n((0, self.config.max_hp() as i64), self.config.size as usize));
        d
    }

    fn immutable_features(&self) -> &[usize] {
        &self.immutable
    }
}

impl fmt::Display for GridState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent=({},{}) dragon=({},{}) trees={:?}", self.agent.row, self.agent.col, self.dragon.row, self.dragon.col, self.tree_hp)
    }
}
