//! Heuristic tree search over action sequences.
//!
//! Each iteration walks from the root by UCT to an unexpanded state node,
//! expands every legal action at once through a determinization bucket (`d`
//! sampled successors, deduplicated by state), scores the new nodes with the
//! configured loss and propagates those scores to the root. After the last
//! iteration the valid, non-terminal node with the lowest loss is returned.
//!
//! The same engine serves two losses: the RL loss over reachability, cost and
//! stochastic uncertainty, and the feature-based baseline loss.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::MlpAutoencoder;
use crate::env::{hash_indices, purpose, EnvAction, FeatureSpace, PolicyOracle, RngStream};
use crate::error::{config_err, Error, Result};
use crate::properties::{
    cost_hat, raccer_loss, reachability_hat, stochastic_certainty, validity, ActionSequence, CertaintyEstimate, FeatureScorer, LossWeights,
    PropertyVector,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Raccer,
    BoTs,
    BoGen,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::BoGen, Method::BoTs, Method::Raccer];

    pub fn name(self) -> &'static str {
        match self {
            Method::Raccer => "raccer",
            Method::BoTs => "bo-ts",
            Method::BoGen => "bo-gen",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raccer" => Ok(Method::Raccer),
            "bo-ts" => Ok(Method::BoTs),
            "bo-gen" => Ok(Method::BoGen),
            other => Err(config_err(format!("unknown method {other:?} (expected raccer, bo-ts or bo-gen)"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which loss evaluates nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeLoss {
    Raccer,
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Iterations `T`.
    pub iterations: usize,
    /// Certainty simulations `N`.
    pub simulations: u32,
    /// Maximum sequence length `k`.
    pub max_actions: usize,
    /// Determinization samples `d` per (node, action).
    pub samples: u32,
    pub c_explore: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Abort with [`Error::Timeout`] past this many milliseconds.
    pub max_wall_ms: Option<u64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            simulations: 100,
            max_actions: 5,
            samples: 5,
            c_explore: std::f64::consts::SQRT_2,
            weights: LossWeights::default(),
            seed: 0,
            max_wall_ms: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(config_err("iterations T must be at least 1"));
        }
        if self.max_actions < 1 {
            return Err(config_err("max_actions k must be at least 1"));
        }
        if self.simulations < 1 {
            return Err(config_err("simulations N must be at least 1"));
        }
        if self.samples < 1 {
            return Err(config_err("determinization samples d must be at least 1"));
        }
        if !(self.c_explore >= 0.0 && self.c_explore.is_finite()) {
            return Err(config_err("c_explore must be a non-negative finite number"));
        }
        self.weights.validate()
    }
}

pub type NodeId = usize;

/// Determinization node: the sampled outcomes of one action in one state.
#[derive(Clone, Debug)]
pub struct Bucket {
    pub action: EnvAction,
    pub children: Vec<NodeId>,
    /// `N(n, a)`.
    pub visits: u64,
    /// `Q(n, a)`: running mean of every value propagated through this edge.
    pub value: f64,
    exhausted: bool,
}

#[derive(Clone, Debug)]
pub struct SearchNode<S> {
    pub state: S,
    pub path: ActionSequence,
    /// Rewards collected along this node's own sampled trajectory.
    pub rewards: Vec<f64>,
    pub depth: usize,
    pub parent: Option<(NodeId, usize)>,
    /// How often this state was drawn in its parent bucket.
    pub samples: u32,
    pub val: f64,
    /// `N(n)`.
    pub visits: u64,
    pub buckets: Vec<Bucket>,
    pub terminal: bool,
    pub valid: bool,
    expanded: bool,
    exhausted: bool,
}

/// UCT score with losses negated so that lower loss ranks higher.
pub fn uct_score(q: f64, parent_visits: u64, edge_visits: u64, c_explore: f64) -> f64 {
    if edge_visits == 0 {
        return f64::INFINITY;
    }
    -q + c_explore * ((parent_visits as f64).ln() / edge_visits as f64).sqrt()
}

impl<S> SearchNode<S> {
    pub fn is_expanded(&self) -> bool {
        self.expanded
    }

    /// UCT choice among all buckets: unvisited edges first, ties by action index.
    pub fn uct_select(&self, c_explore: f64) -> Option<EnvAction> {
        self.select_bucket(c_explore, |_| true).map(|i| self.buckets[i].action)
    }

    fn select_bucket(&self, c_explore: f64, allow: impl Fn(&Bucket) -> bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, b) in self.buckets.iter().enumerate() {
            if !allow(b) {
                continue;
            }
            let score = uct_score(b.value, self.visits, b.visits, c_explore);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((i, score));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Result of a search or genetic run.
#[derive(Clone, Debug, PartialEq)]
pub struct Counterfactual<S> {
    pub state: S,
    pub actions: ActionSequence,
    pub properties: PropertyVector,
    pub raccer_loss: f64,
    pub baseline_loss: f64,
    /// Certainty estimate backing `properties.uncertainty`, when one was run.
    pub certainty: Option<CertaintyEstimate>,
    pub method: Method,
}

impl<S> Counterfactual<S> {
    /// The loss the producing method optimized.
    pub fn loss(&self) -> f64 {
        match self.method {
            Method::Raccer => self.raccer_loss,
            Method::BoTs | Method::BoGen => self.baseline_loss,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub iterations: usize,
    pub nodes: usize,
    pub valid_candidates: usize,
    pub certainty_runs: usize,
}

/// Everything a search needs besides the query: the environment, the black
/// box and the autoencoder behind the feature-based scores.
pub struct Engine<'a, E, O> {
    pub env: &'a E,
    pub oracle: &'a O,
    pub autoencoder: &'a MlpAutoencoder,
}

impl<'a, E, O> Clone for Engine<'a, E, O> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<'a, E, O> Copy for Engine<'a, E, O> {}

impl<'a, E, O> Engine<'a, E, O>
where
    E: FeatureSpace,
    O: PolicyOracle<E::State>,
{
    pub fn new(env: &'a E, oracle: &'a O, autoencoder: &'a MlpAutoencoder) -> Self {
        Self { env, oracle, autoencoder }
    }

    /// All six properties of reaching `state` from `start` via `path`.
    /// `certainty` is reused when already known.
    #[allow(clippy::too_many_arguments)]
    pub fn properties(
        &self,
        start: &E::State,
        path: &ActionSequence,
        rewards: &[f64],
        state: &E::State,
        desired: EnvAction,
        k: usize,
        n: u32,
        stream: RngStream,
        certainty: Option<CertaintyEstimate>,
    ) -> Result<(PropertyVector, CertaintyEstimate)> {
        let scorer = FeatureScorer::new(self.autoencoder, &self.env.encode_features(start))?;
        let est = match certainty {
            Some(c) => c,
            None => stochastic_certainty(self.env, self.oracle, start, path.actions(), desired, n, stream)?,
        };
        let (proximity, sparsity, dmc) = scorer.score(&self.env.encode_features(state))?;
        let pv = PropertyVector {
            reachability: reachability_hat(path.len(), k)?,
            cost: cost_hat(rewards, self.env.reward_scale()),
            uncertainty: 1.0 - est.value(),
            proximity,
            sparsity,
            dmc,
        };
        Ok((pv, est))
    }
}

/// Stream used for certainty estimates of a given path, shared by every
/// consumer so the same path always gets the same estimate.
pub fn certainty_stream(seed: u64, path: &ActionSequence) -> RngStream {
    RngStream::new(seed, purpose::CERTAINTY).derive(hash_indices(path.indices().into_iter().map(|i| i as u64)))
}

/// A single query's search tree plus the machinery to grow it.
pub struct TreeSearch<'a, E: FeatureSpace, O> {
    engine: Engine<'a, E, O>,
    loss: NodeLoss,
    cfg: SearchConfig,
    desired: EnvAction,
    scorer: FeatureScorer<'a>,
    nodes: Vec<SearchNode<E::State>>,
    certainty_cache: HashMap<Vec<usize>, CertaintyEstimate>,
    iterations: usize,
}

impl<'a, E, O> TreeSearch<'a, E, O>
where
    E: FeatureSpace,
    O: PolicyOracle<E::State>,
{
    pub fn new(engine: Engine<'a, E, O>, root: E::State, desired: EnvAction, loss: NodeLoss, cfg: SearchConfig) -> Result<Self> {
        cfg.validate()?;
        if engine.env.is_terminal(&root) {
            return Err(Error::Terminal("cannot explain a terminal state"));
        }
        if !engine.env.actions().contains(&desired) {
            return Err(Error::ActionOutOfRange { index: desired.index, count: engine.env.actions().len() });
        }
        let scorer = FeatureScorer::new(engine.autoencoder, &engine.env.encode_features(&root))?;
        let mut search = Self { engine, loss, cfg, desired, scorer, nodes: Vec::new(), certainty_cache: HashMap::new(), iterations: 0 };
        search.nodes.push(SearchNode {
            state: root,
            path: ActionSequence::empty(),
            rewards: Vec::new(),
            depth: 0,
            parent: None,
            samples: 1,
            val: f64::NAN,
            visits: 0,
            buckets: Vec::new(),
            terminal: false,
            valid: false,
            expanded: false,
            exhausted: false,
        });
        search.evaluate_node(0)?;
        Ok(search)
    }

    pub fn nodes(&self) -> &[SearchNode<E::State>] {
        &self.nodes
    }

    pub fn root(&self) -> &SearchNode<E::State> {
        &self.nodes[0]
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Every reachable node within the budget has been expanded.
    pub fn is_exhausted(&self) -> bool {
        self.nodes[0].exhausted
    }

    /// Walk from the root by UCT, skipping fully explored subtrees, to the
    /// next node to expand. `None` once the whole tree is explored.
    pub fn select(&self, stream: RngStream) -> Option<NodeId> {
        let mut rng = stream.rng();
        let mut id = 0;
        loop {
            let node = &self.nodes[id];
            if node.exhausted {
                return None;
            }
            if !node.is_expanded() {
                return Some(id);
            }
            let b = node.select_bucket(self.cfg.c_explore, |b| !b.exhausted)?;
            let open: Vec<NodeId> = node.buckets[b].children.iter().copied().filter(|&c| !self.nodes[c].exhausted).collect();
            let total: u32 = open.iter().map(|&c| self.nodes[c].samples).sum();
            let mut pick = rng.random_range(0..total);
            id = open[0];
            for &c in &open {
                let w = self.nodes[c].samples;
                if pick < w {
                    id = c;
                    break;
                }
                pick -= w;
            }
        }
    }

    /// Expand every legal action of `id` with `d` sampled successors each,
    /// merging equal states. Returns the new nodes; a node at depth `k` or a
    /// terminal node is a leaf and yields nothing.
    pub fn expand(&mut self, id: NodeId) -> Result<Vec<NodeId>> {
        let (depth, terminal, expanded) = {
            let n = &self.nodes[id];
            (n.depth, n.terminal, n.is_expanded())
        };
        if terminal || depth >= self.cfg.max_actions || expanded {
            return Ok(Vec::new());
        }
        let env = self.engine.env;
        let base = RngStream::new(self.cfg.seed, purpose::EXPAND).derive(id as u64);
        let mut created = Vec::new();
        let mut buckets = Vec::new();
        for action in env.legal_actions(&self.nodes[id].state) {
            let mut children: Vec<NodeId> = Vec::new();
            for j in 0..self.cfg.samples {
                let mut rng = base.derive_all(&[action.index as u64, j as u64]).rng();
                let t = env.step(&self.nodes[id].state, action, &mut rng)?;
                if let Some(&dup) = children.iter().find(|&&c| self.nodes[c].state == t.next_state) {
                    self.nodes[dup].samples += 1;
                    continue;
                }
                let parent = &self.nodes[id];
                let mut path = parent.path.clone();
                path.0.push(action);
                let mut rewards = parent.rewards.clone();
                rewards.push(t.reward);
                let child = SearchNode {
                    state: t.next_state,
                    path,
                    rewards,
                    depth: depth + 1,
                    parent: Some((id, buckets.len())),
                    samples: 1,
                    val: f64::NAN,
                    visits: 0,
                    buckets: Vec::new(),
                    terminal: t.terminal,
                    valid: false,
                    expanded: false,
                    exhausted: t.terminal || depth + 1 >= self.cfg.max_actions,
                };
                self.nodes.push(child);
                let cid = self.nodes.len() - 1;
                children.push(cid);
                created.push(cid);
            }
            buckets.push(Bucket { action, children, visits: 0, value: 0.0, exhausted: false });
        }
        let node = &mut self.nodes[id];
        node.buckets = buckets;
        node.expanded = true;
        Ok(created)
    }

    fn certainty(&mut self, id: NodeId) -> Result<CertaintyEstimate> {
        let key = self.nodes[id].path.indices();
        if let Some(c) = self.certainty_cache.get(&key) {
            return Ok(*c);
        }
        let node = &self.nodes[id];
        let est = stochastic_certainty(
            self.engine.env,
            self.engine.oracle,
            &self.nodes[0].state,
            node.path.actions(),
            self.desired,
            self.cfg.simulations,
            certainty_stream(self.cfg.seed, &node.path),
        )?;
        self.certainty_cache.insert(key, est);
        Ok(est)
    }

    /// Score a node with the configured loss and record its validity.
    pub fn evaluate_node(&mut self, id: NodeId) -> Result<f64> {
        let val = match self.loss {
            NodeLoss::Raccer => {
                let est = self.certainty(id)?;
                let node = &self.nodes[id];
                let pv = PropertyVector {
                    reachability: reachability_hat(node.depth, self.cfg.max_actions)?,
                    cost: cost_hat(&node.rewards, self.engine.env.reward_scale()),
                    uncertainty: 1.0 - est.value(),
                    ..Default::default()
                };
                raccer_loss(&pv, &self.cfg.weights)
            }
            NodeLoss::Baseline => {
                let f = self.engine.env.encode_features(&self.nodes[id].state);
                self.scorer.loss(&f, &self.cfg.weights)?
            }
        };
        let node = &mut self.nodes[id];
        node.val = val;
        node.valid = !node.terminal && validity(self.engine.oracle, &node.state, self.desired);
        Ok(val)
    }

    /// Push each leaf's value up to the root, updating visit counts and the
    /// running mean `Q(n, a)` of every edge on the way.
    pub fn backpropagate(&mut self, leaves: &[NodeId]) {
        for &leaf in leaves {
            let val = self.nodes[leaf].val;
            let mut cur = leaf;
            while let Some((p, b)) = self.nodes[cur].parent {
                let parent = &mut self.nodes[p];
                let bucket = &mut parent.buckets[b];
                bucket.visits += 1;
                bucket.value += (val - bucket.value) / bucket.visits as f64;
                parent.visits += 1;
                cur = p;
            }
        }
    }

    /// Recompute exhaustion flags from `id` up to the root.
    fn refresh_exhaustion(&mut self, mut id: NodeId) {
        loop {
            let flags: Vec<bool> = self.nodes[id].buckets.iter().map(|b| b.children.iter().all(|&c| self.nodes[c].exhausted)).collect();
            let k = self.cfg.max_actions;
            let node = &mut self.nodes[id];
            for (b, f) in node.buckets.iter_mut().zip(&flags) {
                b.exhausted = *f;
            }
            node.exhausted = node.terminal || node.depth >= k || (node.expanded && flags.iter().all(|f| *f));
            match node.parent {
                Some((p, _)) => id = p,
                None => return,
            }
        }
    }

    /// One select / expand / evaluate / backpropagate round. Returns `false`
    /// once nothing is left to expand.
    pub fn iterate(&mut self) -> Result<bool> {
        let stream = RngStream::new(self.cfg.seed, purpose::SELECT).derive(self.iterations as u64);
        let Some(id) = self.select(stream) else {
            return Ok(false);
        };
        let created = self.expand(id)?;
        for &c in &created {
            self.evaluate_node(c)?;
        }
        self.backpropagate(&created);
        self.refresh_exhaustion(id);
        self.iterations += 1;
        Ok(true)
    }

    /// Run up to `T` iterations (stopping early if the tree is fully explored).
    pub fn run(&mut self) -> Result<()> {
        let started = Instant::now();
        let budget = self.cfg.max_wall_ms.map(Duration::from_millis);
        while self.iterations < self.cfg.iterations {
            if let Some(b) = budget {
                if started.elapsed() > b {
                    return Err(Error::Timeout(b.as_millis() as u64));
                }
            }
            if !self.iterate()? {
                break;
            }
        }
        Ok(())
    }

    /// Valid, non-terminal evaluated node with the lowest loss (earliest node
    /// on ties).
    pub fn best_node(&self) -> Option<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.valid && !n.terminal && n.depth <= self.cfg.max_actions)
            .min_by(|(i, a), (j, b)| a.val.total_cmp(&b.val).then(i.cmp(j)))
            .map(|(i, _)| i)
    }

    pub fn stats(&self) -> SearchStats {
        SearchStats {
            iterations: self.iterations,
            nodes: self.nodes.len(),
            valid_candidates: self.nodes.iter().filter(|n| n.valid && !n.terminal).count(),
            certainty_runs: self.certainty_cache.len(),
        }
    }

    /// Package the best node as a [`Counterfactual`] with all six properties.
    pub fn result(&mut self) -> Result<Option<Counterfactual<E::State>>> {
        let Some(id) = self.best_node() else {
            return Ok(None);
        };
        let est = self.certainty(id)?;
        let node = &self.nodes[id];
        let (pv, est) = self.engine.properties(
            &self.nodes[0].state,
            &node.path,
            &node.rewards,
            &node.state,
            self.desired,
            self.cfg.max_actions,
            self.cfg.simulations,
            certainty_stream(self.cfg.seed, &node.path),
            Some(est),
        )?;
        let w = &self.cfg.weights;
        let method = match self.loss {
            NodeLoss::Raccer => Method::Raccer,
            NodeLoss::Baseline => Method::BoTs,
        };
        Ok(Some(Counterfactual {
            state: node.state.clone(),
            actions: node.path.clone(),
            properties: pv,
            raccer_loss: raccer_loss(&pv, w),
            baseline_loss: crate::properties::baseline_loss(pv.proximity, pv.sparsity as f64, pv.dmc, w),
            certainty: Some(est),
            method,
        }))
    }
}

/// Search outcome with diagnostics.
#[derive(Clone, Debug)]
pub struct SearchOutcome<S> {
    pub counterfactual: Option<Counterfactual<S>>,
    pub stats: SearchStats,
}

/// Run a full search for a counterfactual of `state` in which the oracle picks `desired`.
pub fn search<E, O>(
    engine: Engine<'_, E, O>,
    state: &E::State,
    desired: EnvAction,
    loss: NodeLoss,
    cfg: &SearchConfig,
) -> Result<SearchOutcome<E::State>>
where
    E: FeatureSpace,
    O: PolicyOracle<E::State>,
{
    let mut tree = TreeSearch::new(engine, state.clone(), desired, loss, cfg.clone())?;
    tree.run()?;
    let counterfactual = tree.result()?;
    Ok(SearchOutcome { counterfactual, stats: tree.stats() })
}
