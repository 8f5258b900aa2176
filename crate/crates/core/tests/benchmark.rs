mod common;

use raccer::benchmark::*;
use raccer::gridworld::{Cell, DOWN, SHOOT, UP};
use raccer::search::SearchConfig;
use raccer::*;

/// Shoots whenever the shot would land, otherwise moves up.
struct Marksman(GridWorld);

impl PolicyOracle<GridState> for Marksman {
    fn predict(&self, s: &GridState) -> Result<EnvAction> {
        if s.terminal {
            return Err(Error::Terminal("oracle"));
        }
        Ok(if self.0.has_clear_shot(s) { SHOOT } else { UP })
    }
}

fn small_cfg(n_states: usize) -> BenchmarkConfig {
    BenchmarkConfig { n_states, pool_episodes: 100, seed: 4, ..Default::default() }
}

#[test]
fn dataset_is_seeded_and_excludes_greedy_actions() {
    let world = common::world(false);
    let policy = common::policy(false);
    let a = sample_factual_dataset(&world, policy, &small_cfg(100)).unwrap();
    let b = sample_factual_dataset(&world, policy, &small_cfg(100)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 600);
    for (i, q) in a.iter().enumerate() {
        assert_eq!(q.id, i);
        assert!(!q.state.terminal);
        assert_ne!(policy.predict(&q.state).unwrap(), q.desired);
    }
    let states: std::collections::HashSet<&GridState> = a.iter().map(|q| &q.state).collect();
    assert_eq!(states.len(), 100);
    let other = sample_factual_dataset(&world, policy, &BenchmarkConfig { seed: 5, ..small_cfg(100) }).unwrap();
    assert_ne!(a, other);
}

#[test]
fn dataset_file_round_trip() {
    let world = common::world(false);
    let qs = sample_factual_dataset(&world, common::policy(false), &small_cfg(10)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("queries.jsonl");
    write_dataset(&world, &qs, &p).unwrap();
    let back = read_dataset(&world, &p).unwrap();
    assert_eq!(back.len(), qs.len());
    for (a, b) in qs.iter().zip(&back) {
        assert_eq!((a.id, a.desired), (b.id, b.desired));
        assert_eq!(world.features(&a.state), world.features(&b.state));
    }
    std::fs::write(&p, "{\"id\":0,\"features\":[0,0,0,0,0,0,0,0,0],\"action\":1}\n").unwrap();
    assert!(read_dataset(&world, &p).is_err(), "agent on the dragon must be rejected");
}

#[test]
fn locate_examples() {
    let world = common::world(true);
    let x = GridState::new(&world, Cell::new(2, 1), Cell::new(4, 3), vec![0, 0, 0, 0, 0]);
    let stream = RngStream::new(0, 0);
    let root = locate_in_execution_tree(&world, &x, &world.features(&x), 5, 5, stream).unwrap().unwrap();
    assert!(root.actions.is_empty());

    let one = GridState::new(&world, Cell::new(3, 1), Cell::new(4, 3), vec![0; 5]);
    let found = locate_in_execution_tree(&world, &x, &world.features(&one), 5, 5, stream).unwrap().unwrap();
    assert_eq!(found.actions.actions(), &[DOWN]);

    let mut illegal = world.features(&x);
    (illegal[0], illegal[1]) = (4.0, 3.0);
    assert!(locate_in_execution_tree(&world, &x, &illegal, 5, 5, stream).unwrap().is_none());
    assert!(locate_in_execution_tree(&world, &x, &illegal, 0, 5, stream).is_err());
}

fn located_record(target: &GridState, x: &GridState, world: &GridWorld, oracle: &Marksman) -> BenchmarkRecord {
    let ae = MlpAutoencoder::identity(9);
    let engine = Engine::new(world, oracle, &ae);
    let cf = Counterfactual {
        state: target.clone(),
        actions: ActionSequence::empty(),
        properties: PropertyVector::default(),
        raccer_loss: 0.0,
        baseline_loss: 0.0,
        certainty: None,
        method: Method::BoGen,
    };
    let q = FactualQuery { id: 0, state: x.clone(), desired: SHOOT };
    score_counterfactual(engine, &q, Method::BoGen, Some(&cf), &SearchConfig::default()).unwrap()
}

#[test]
fn genetic_counterfactual_two_moves_away() {
    let world = common::world(true);
    let oracle = Marksman(world.clone());
    let x = GridState::new(&world, Cell::new(2, 1), Cell::new(4, 3), vec![0; 5]);
    let target = GridState::new(&world, Cell::new(4, 1), Cell::new(4, 3), vec![0; 5]);
    let r = located_record(&target, &x, &world, &oracle);
    assert!(r.generated && r.located);
    assert_eq!(r.reachability, 0.4);
    assert_eq!(r.cost, 1.0);
    assert_eq!(r.uncertainty, 0.0);
    assert_eq!(r.sparsity, Some(1));
}

#[test]
fn unreachable_genetic_counterfactual_gets_worst_rl_scores() {
    let world = common::world(true);
    let oracle = Marksman(world.clone());
    let x = GridState::new(&world, Cell::new(0, 0), Cell::new(2, 4), vec![3; 5]);
    let target = GridState::new(&world, Cell::new(0, 4), Cell::new(2, 4), vec![3; 5]);
    let r = located_record(&target, &x, &world, &oracle);
    assert!(r.generated && !r.located);
    assert_eq!((r.reachability, r.cost, r.uncertainty), (1.0, 1.0, 1.0));
    assert_eq!(r.raccer_loss, 3.0);
    assert!(r.proximity.is_some() && r.actions.is_none());
}

#[test]
fn tree_search_path_of_two_is_scored_from_its_sequence() {
    let world = common::world(true);
    let oracle = Marksman(world.clone());
    let ae = MlpAutoencoder::identity(9);
    let engine = Engine::new(&world, &oracle, &ae);
    let x = GridState::new(&world, Cell::new(2, 1), Cell::new(4, 3), vec![0; 5]);
    let q = FactualQuery { id: 0, state: x.clone(), desired: SHOOT };
    let cfg = SearchConfig { simulations: 10, ..Default::default() };
    let cf = search(engine, &x, SHOOT, NodeLoss::Raccer, &cfg).unwrap().counterfactual.unwrap();
    assert_eq!(cf.actions.len(), 2);
    let r = score_counterfactual(engine, &q, Method::Raccer, Some(&cf), &cfg).unwrap();
    assert_eq!((r.reachability, r.uncertainty), (0.4, 0.0));
    assert_eq!(r.actions.as_deref().map(|s| s.split(' ').count()), Some(2));
}

#[test]
fn missing_counterfactual_gets_placeholders() {
    let world = common::world(true);
    let oracle = Marksman(world.clone());
    let ae = MlpAutoencoder::identity(9);
    let engine = Engine::new(&world, &oracle, &ae);
    let x = GridState::new(&world, Cell::new(0, 0), Cell::new(2, 4), vec![3; 5]);
    let q = FactualQuery { id: 7, state: x, desired: SHOOT };
    for m in Method::ALL {
        let r = score_counterfactual(engine, &q, m, None, &SearchConfig::default()).unwrap();
        assert!(!r.generated && !r.located);
        assert_eq!((r.reachability, r.cost, r.uncertainty), (1.0, 1.0, 1.0));
        assert_eq!((r.proximity, r.sparsity, r.dmc, r.baseline_loss), (None, None, None, None));
        assert_eq!(r.query_id, 7);
    }
}

#[test]
fn locating_a_search_result_reproduces_its_reachability() {
    let world = common::world(true);
    let policy = common::policy(true);
    let ae = common::autoencoder(true);
    let engine = Engine::new(&world, policy, ae);
    let qs = sample_factual_dataset(&world, policy, &small_cfg(8)).unwrap();
    let cfg = SearchConfig { iterations: 1_000_000, simulations: 2, max_actions: 3, ..Default::default() };
    let mut checked = 0;
    for q in &qs {
        let Some(cf) = search(engine, &q.state, q.desired, NodeLoss::Raccer, &cfg).unwrap().counterfactual else { continue };
        let found = locate_in_execution_tree(&world, &q.state, &world.features(&cf.state), 3, 5, RngStream::new(0, 0)).unwrap().unwrap();
        assert_eq!(found.actions.len(), cf.actions.len());
        checked += 1;
    }
    assert!(checked > 5);
}

#[test]
fn benchmark_run_is_reproducible_and_worker_independent() {
    let world = common::world(false);
    let policy = common::policy(false);
    let ae = common::autoencoder(false);
    let engine = Engine::new(&world, policy, ae);
    let qs = sample_factual_dataset(&world, policy, &small_cfg(2)).unwrap();
    let scfg = SearchConfig { iterations: 30, simulations: 20, seed: 1, ..Default::default() };
    let gcfg = GaConfig { generations: 3, ..Default::default() };
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_benchmark(engine, &qs, &Method::ALL, &scfg, &gcfg, false).unwrap())
    };
    let a: Vec<BenchmarkRecord> = run(1).into_iter().map(|r| r.record).collect();
    let b: Vec<BenchmarkRecord> = run(3).into_iter().map(|r| r.record).collect();
    assert_eq!(a, b);
    assert_eq!(a.len(), qs.len() * 3);
    assert!(a.iter().all(|r| r.wall_ms.is_none()));
    for s in aggregate(&a).unwrap() {
        assert!((0.0..=100.0).contains(&s.generation_rate));
        for v in [s.reachability, s.cost, s.uncertainty].into_iter().flatten() {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
