//! One explanation request, answered by any of the three methods.

use std::time::Instant;

use anyhow::bail;
use raccer::benchmark::{score_counterfactual, FactualQuery};
use raccer::search::SearchStats;
use raccer::*;
use serde::{Deserialize, Serialize};

use crate::models::{features, render_lines, Models};

/// The six properties. The three RL properties are absent when no action
/// path to the counterfactual is known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyDoc {
    pub reachability: Option<f64>,
    pub cost: Option<f64>,
    pub certainty: Option<f64>,
    pub proximity: f64,
    pub sparsity: u32,
    pub dmc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: Option<usize>,
    pub nodes: Option<usize>,
    pub valid_candidates: Option<usize>,
    pub certainty_runs: Option<usize>,
    pub genetic_evaluations: Option<usize>,
}

impl From<SearchStats> for Diagnostics {
    fn from(s: SearchStats) -> Self {
        Self {
            iterations: Some(s.iterations),
            nodes: Some(s.nodes),
            valid_candidates: Some(s.valid_candidates),
            certainty_runs: Some(s.certainty_runs),
            genetic_evaluations: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub found: bool,
    pub method: Method,
    pub seed: u64,
    pub state: Vec<i64>,
    pub state_render: Vec<String>,
    pub greedy_action: String,
    pub desired_action: String,
    pub counterfactual: Option<Vec<i64>>,
    pub counterfactual_render: Option<Vec<String>>,
    /// Action names leading from the state to the counterfactual.
    pub actions: Option<Vec<String>>,
    pub properties: Option<PropertyDoc>,
    pub raccer_loss: Option<f64>,
    pub baseline_loss: Option<f64>,
    /// Fraction of simulated executions of `actions` that ended where the
    /// policy picks the desired action.
    pub success_rate: Option<f64>,
    pub simulations: u32,
    pub diagnostics: Diagnostics,
    pub elapsed_ms: u64,
}

/// Explain why the policy does not pick `desired` in `state` with `method`.
pub fn explain(
    models: &Models,
    state: &GridState,
    desired: EnvAction,
    method: Method,
    search_cfg: &SearchConfig,
    ga_cfg: &GaConfig,
) -> anyhow::Result<Explanation> {
    if state.terminal {
        bail!("cannot explain a terminal state");
    }
    let started = Instant::now();
    let engine = models.engine();
    let (cf, diagnostics) = match method {
        Method::Raccer | Method::BoTs => {
            let loss = if method == Method::Raccer { NodeLoss::Raccer } else { NodeLoss::Baseline };
            let out = search(engine, state, desired, loss, search_cfg)?;
            (out.counterfactual, Diagnostics::from(out.stats))
        }
        Method::BoGen => {
            let out = run_genetic(engine, state, desired, &search_cfg.weights, ga_cfg)?;
            let d = Diagnostics { genetic_evaluations: Some(out.evaluations), ..Default::default() };
            (out.counterfactual, d)
        }
    };
    let query = FactualQuery { id: 0, state: state.clone(), desired };
    let rec = score_counterfactual(engine, &query, method, cf.as_ref(), search_cfg)?;
    let world = &models.world;
    let properties = rec.proximity.map(|proximity| PropertyDoc {
        reachability: rec.located.then_some(rec.reachability),
        cost: rec.located.then_some(rec.cost),
        certainty: rec.located.then_some(1.0 - rec.uncertainty),
        proximity,
        sparsity: rec.sparsity.unwrap_or_default(),
        dmc: rec.dmc.unwrap_or_default(),
    });
    let actions = match (&cf, &rec.actions) {
        (Some(_), Some(a)) if !a.is_empty() => Some(a.split(' ').map(str::to_string).collect()),
        (Some(_), Some(_)) => Some(Vec::new()),
        _ => None,
    };
    Ok(Explanation {
        found: cf.is_some(),
        method,
        seed: search_cfg.seed,
        state: features(world, state),
        state_render: render_lines(world, state),
        greedy_action: models.policy.predict(state)?.label.to_string(),
        desired_action: desired.label.to_string(),
        counterfactual: cf.as_ref().map(|c| features(world, &c.state)),
        counterfactual_render: cf.as_ref().map(|c| render_lines(world, &c.state)),
        actions,
        properties,
        raccer_loss: (cf.is_some() && rec.located).then_some(rec.raccer_loss),
        baseline_loss: rec.baseline_loss,
        success_rate: (cf.is_some() && rec.located).then_some(1.0 - rec.uncertainty),
        simulations: search_cfg.simulations,
        diagnostics,
        elapsed_ms: started.elapsed().as_millis() as u64,
    })
}

/// Re-check a positive answer against the policy before it leaves the process.
pub fn recheck(models: &Models, e: &Explanation, desired: EnvAction) -> anyhow::Result<()> {
    if let Some(f) = &e.counterfactual {
        let s = models.state(f)?;
        if models.policy.predict(&s)? != desired {
            bail!("counterfactual {f:?} failed the validity re-check");
        }
    }
    Ok(())
}
