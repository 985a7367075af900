use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lq_solvability::kernel::pinv;
use lq_solvability::oracle::{assemble, oracle_classify};
use lq_solvability::perturbation::{run_sweep, run_sweep_parallel, EpsilonSchedule};
use lq_solvability::{solve_generalized_riccati, DMatrix, DVector};
use lq_solvability_bench::{convex_instance, two_step};

fn riccati(c: &mut Criterion) {
    let mut group = c.benchmark_group("generalized_riccati");
    for &(horizon, n, m) in &[(2, 1, 1), (50, 4, 2), (200, 8, 4)] {
        let problem = convex_instance(horizon, n, m);
        group.bench_with_input(BenchmarkId::from_parameter(format!("N{horizon}_n{n}_m{m}")), &problem, |b, p| {
            b.iter(|| solve_generalized_riccati(black_box(p)).unwrap())
        });
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let schedule = EpsilonSchedule::default();
    let problem = two_step();
    let x0 = DVector::from_element(1, 1.0);
    c.bench_function("sweep/two_step", |b| b.iter(|| run_sweep(black_box(&problem), &x0, &schedule).unwrap()));

    let problem = convex_instance(50, 4, 2);
    let x0 = DVector::from_element(4, 1.0);
    let mut group = c.benchmark_group("sweep/N50_n4_m2");
    for threads in [1, 4] {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &t| {
            b.iter(|| run_sweep_parallel(&problem, &x0, &schedule, t).unwrap())
        });
    }
    group.finish();
}

fn oracle(c: &mut Criterion) {
    let mut group = c.benchmark_group("oracle");
    for &(horizon, n, m) in &[(8, 3, 2), (40, 4, 2)] {
        let problem = convex_instance(horizon, n, m);
        let x0 = DVector::from_element(n, 1.0);
        group.bench_function(format!("N{horizon}_n{n}_m{m}"), |b| {
            b.iter(|| oracle_classify(&assemble(black_box(&problem), &x0).unwrap()).unwrap())
        });
    }
    group.finish();
}

fn pseudoinverse(c: &mut Criterion) {
    let m = DMatrix::from_fn(6, 4, |i, j| ((i * 4 + j) as f64).sin()) * DMatrix::from_fn(4, 6, |i, j| (i + j) as f64 % 3.0);
    c.bench_function("pinv/6x6_rank_deficient", |b| b.iter(|| pinv(black_box(&m)).unwrap()));
}

criterion_group!(benches, riccati, sweep, oracle, pseudoinverse);
criterion_main!(benches);
