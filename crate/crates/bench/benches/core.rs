use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use kgood_core::bounds::{empirical_rademacher, Ball, Expectation};
use kgood_core::harness::{gen_planted, PlantedSpec};
use kgood_core::optimize::solve;
use kgood_core::risk::empirical_risk;
use kgood_core::{Regularizer, SolverConfig};

fn risk(c: &mut Criterion) {
    let mut group = c.benchmark_group("empirical_risk");
    for n in [100usize, 400] {
        let plant = gen_planted(&PlantedSpec::new(10, vec![0, 1], n, 1)).unwrap();
        let mu = plant.mu_o.clone();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| empirical_risk(black_box(&mu), &plant.data, &plant.kernels).unwrap())
        });
    }
    group.finish();
}

fn solver(c: &mut Criterion) {
    let plant = gen_planted(&PlantedSpec::new(10, vec![0, 1], 100, 2)).unwrap();
    let mut group = c.benchmark_group("solve");
    group.sample_size(10);
    for reg in [Regularizer::L2, Regularizer::L1] {
        let config = SolverConfig::new(0.1).max_iters(500);
        group.bench_function(reg.to_string(), |b| {
            b.iter(|| solve(reg, &plant.data, &plant.kernels, black_box(&config)).unwrap())
        });
    }
    group.finish();
}

fn rademacher(c: &mut Criterion) {
    let z: Vec<Vec<f64>> = (0..12)
        .map(|i| (0..5).map(|j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5).collect())
        .collect();
    let mut group = c.benchmark_group("empirical_rademacher");
    group.sample_size(10);
    for (name, ball) in [("l2", Ball::L2(2.0)), ("l1", Ball::L1(2.0))] {
        group.bench_function(name, |b| {
            b.iter(|| empirical_rademacher(black_box(&z), ball, false, Expectation::Exhaustive).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, risk, solver, rademacher);
criterion_main!(benches);
