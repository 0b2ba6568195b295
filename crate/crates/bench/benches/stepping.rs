use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use sweep_bench::crowd_problem;
use sweep_core::builtin::builtin;
use sweep_core::{solve, step};

fn single_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("crowd_step");
    for count in [20, 150] {
        let problem = crowd_problem(count, 4.0);
        group.bench_function(BenchmarkId::from_parameter(count), |b| {
            b.iter(|| black_box(step(&problem, 0.0, problem.initial().as_slice(), 0.01).unwrap()))
        });
    }
    group.finish();
}

fn full_runs(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    group.sample_size(10);
    let wall = builtin("moving-wall-1d", None).unwrap();
    group.bench_function("moving_wall_n1000", |b| b.iter(|| black_box(solve(&wall, 1000).unwrap())));
    let crowd = crowd_problem(20, 1.0);
    group.bench_function("crowd20_n100", |b| b.iter(|| black_box(solve(&crowd, 100).unwrap())));
    group.finish();
}

criterion_group!(benches, single_step, full_runs);
criterion_main!(benches);
