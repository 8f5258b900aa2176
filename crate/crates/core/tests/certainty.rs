use raccer::env::purpose;
use raccer::gridworld::{Cell, ACTIONS, RIGHT, SHOOT, WAIT};
use raccer::properties::stochastic_certainty;
use raccer::*;
use rand::Rng;

/// Picks SHOOT when the agent stands in the middle column with at most one
/// tree around, WAIT otherwise.
struct CountOracle;

impl PolicyOracle<GridState> for CountOracle {
    fn predict(&self, s: &GridState) -> Result<EnvAction> {
        if s.terminal {
            return Err(Error::Terminal("oracle"));
        }
        let trees = s.tree_hp.iter().filter(|&&h| h > 0).count();
        Ok(if s.agent.col == 2 && trees <= 1 { SHOOT } else { WAIT })
    }
}

fn subsets(cells: &[u8]) -> Vec<Vec<u8>> {
    (0..1u32 << cells.len()).map(|mask| cells.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &c)| c).collect()).collect()
}

/// Agent at (0,0) plays RIGHT, RIGHT on an empty middle column; every empty
/// middle cell not under the agent grows a tree with probability `q` after
/// each step. Enumerates both steps' regrowth outcomes.
fn exact_success(q: f64) -> f64 {
    let prob = |grown: usize, eligible: usize| q.powi(grown as i32) * (1.0 - q).powi((eligible - grown) as i32);
    let rows: Vec<u8> = (0..5).collect();
    let mut p = 0.0;
    for s1 in subsets(&rows) {
        let p1 = prob(s1.len(), rows.len());
        let blocked = s1.contains(&0);
        let eligible: Vec<u8> = rows.iter().copied().filter(|r| !s1.contains(r) && (blocked || *r != 0)).collect();
        for s2 in subsets(&eligible) {
            let p2 = prob(s2.len(), eligible.len());
            let in_mid = !blocked;
            if in_mid && s1.len() + s2.len() <= 1 {
                p += p1 * p2;
            }
        }
    }
    p
}

#[test]
fn calibrated_against_enumeration() {
    let world = GridWorld::new(GridConfig::default()).unwrap();
    let q: f64 = world.config().tree_types.iter().map(|t| t.regrow_prob).sum();
    let p = exact_success(q);
    assert!(p > 0.1 && p < 0.9, "instance should be non-trivial, p = {p}");
    let start = GridState::new(&world, Cell::new(0, 0), Cell::new(4, 4), vec![0; 5]);
    let mean: f64 = (0..100)
        .map(|run| {
            let stream = RngStream::new(run, purpose::CERTAINTY);
            stochastic_certainty(&world, &CountOracle, &start, &[RIGHT, RIGHT], SHOOT, 100, stream).unwrap().value()
        })
        .sum::<f64>()
        / 100.0;
    println!("exact p = {p:.4}, mean estimate = {mean:.4}");
    assert!((mean - p).abs() <= 0.05);
}

#[test]
fn deterministic_env_gives_zero_or_one() {
    let world = GridWorld::new(GridConfig::deterministic()).unwrap();
    let mut rng = RngStream::new(3, 0).rng();
    for i in 0..200 {
        let start = world.sample_initial_state(RngStream::new(i, purpose::INIT));
        let len = rng.random_range(0..=5);
        let actions: Vec<EnvAction> = (0..len).map(|_| ACTIONS[rng.random_range(0..ACTIONS.len())]).collect();
        let desired = ACTIONS[rng.random_range(0..ACTIONS.len())];
        let c = stochastic_certainty(&world, &CountOracle, &start, &actions, desired, 20, RngStream::new(i, 1)).unwrap();
        assert!(c.successes == 0 || c.successes == c.simulations);
    }
}

#[test]
fn terminating_first_action_gives_zero() {
    let world = GridWorld::new(GridConfig::default()).unwrap();
    let start = GridState::new(&world, Cell::new(0, 0), Cell::new(0, 1), vec![0; 5]);
    assert!(world.has_clear_shot(&start));
    for desired in ACTIONS {
        let c = stochastic_certainty(&world, &CountOracle, &start, &[SHOOT, WAIT], desired, 50, RngStream::new(0, 0)).unwrap();
        assert_eq!(c.successes, 0);
    }
}

#[test]
fn zero_simulations_is_an_error() {
    let world = GridWorld::new(GridConfig::default()).unwrap();
    let start = world.sample_initial_state(RngStream::new(0, 0));
    assert!(stochastic_certainty(&world, &CountOracle, &start, &[], WAIT, 0, RngStream::new(0, 0)).is_err());
}
