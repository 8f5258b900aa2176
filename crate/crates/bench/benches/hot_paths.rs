use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use raccer::gridworld::ACTIONS;
use raccer::properties::stochastic_certainty;
use raccer::*;
use raccer_bench::Fixture;
use rand::RngCore;

fn benches(c: &mut Criterion) {
    let fx = Fixture::new().expect("fixture trains");
    let q = &fx.queries[0];

    c.bench_function("env_step", |b| {
        let mut rng = RngStream::new(0, 0).rng();
        let mut i = 0;
        b.iter(|| {
            i = (i + 1) % ACTIONS.len();
            black_box(fx.world.step(&q.state, ACTIONS[i], &mut rng as &mut dyn RngCore).unwrap())
        })
    });

    c.bench_function("certainty_n100_len5", |b| {
        let path = [ACTIONS[6]; 5];
        b.iter(|| black_box(stochastic_certainty(&fx.world, &fx.policy, &q.state, &path, q.desired, 100, RngStream::new(1, 2)).unwrap()))
    });

    c.bench_function("autoencoder_encode", |b| {
        let f = fx.world.features(&q.state);
        b.iter(|| black_box(fx.autoencoder.encode(&f).unwrap()))
    });

    c.bench_function("autoencoder_reconstruction_error", |b| {
        let f = fx.world.features(&q.state);
        b.iter(|| black_box(fx.autoencoder.reconstruction_error(&f).unwrap()))
    });

    let mut slow = c.benchmark_group("search");
    slow.sample_size(10);
    slow.bench_function("raccer_t300_n100_k5", |b| {
        b.iter(|| black_box(search(fx.engine(), &q.state, q.desired, NodeLoss::Raccer, &SearchConfig::default()).unwrap()))
    });
    slow.bench_function("bo_ts_t300_n100_k5", |b| {
        b.iter(|| black_box(search(fx.engine(), &q.state, q.desired, NodeLoss::Baseline, &SearchConfig::default()).unwrap()))
    });
    slow.bench_function("genetic_one_generation", |b| {
        let cfg = GaConfig { generations: 1, ..Default::default() };
        b.iter(|| black_box(run_genetic(fx.engine(), &q.state, q.desired, &LossWeights::default(), &cfg).unwrap()))
    });
    slow.finish();
}

criterion_group!(hot_paths, benches);
criterion_main!(hot_paths);
