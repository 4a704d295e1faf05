use std::hint::black_box;

use acd::em::{e_step_q, random_init, EmRun, FitOptions, ObservedNetwork};
use acd::model::Hyperparams;
use acd::sampler::{generate, PlantedConfig};
use acd::Execution;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn bench_em(c: &mut Criterion) {
    let mut group = c.benchmark_group("em_iteration");
    group.sample_size(10);
    for n in [250usize, 500] {
        let cfg = PlantedConfig {
            n_nodes: n,
            rho_a: 0.3,
            rng_seed: 1,
            ..Default::default()
        };
        let (sample, _) = generate(&cfg).unwrap();
        let obs = ObservedNetwork::new(&sample.network);
        let hyper = Hyperparams::new(3);
        for (name, exec) in modes() {
            let opts = FitOptions {
                execution: exec,
                ..Default::default()
            };
            let init = random_init(&obs, 3, &opts, 5);
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                let mut run = EmRun::new(&obs, hyper, &opts, init.clone());
                b.iter(|| {
                    run.e_step();
                    run.m_step().unwrap();
                    black_box(run.params().pi)
                })
            });
        }
    }
    group.finish();

    let mut group = c.benchmark_group("q_pass");
    group.sample_size(10);
    let (sample, _) = generate(&PlantedConfig::default()).unwrap();
    let obs = ObservedNetwork::new(&sample.network);
    let init = random_init(&obs, 3, &FitOptions::default(), 2);
    for (name, exec) in modes() {
        group.bench_function(name, |b| b.iter(|| black_box(e_step_q(&init, &obs, exec).degenerate_pairs)));
    }
    group.finish();
}

criterion_group!(benches, bench_em);
criterion_main!(benches);
