use std::convert::Infallible;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gparareal::{
    make_fhn, propagate, run_gparareal, run_parareal, Executor, GpararealOptions, RkOrder, SolveConfig, SolverSpec,
    TimeMesh,
};

const SLICES: usize = 16;

fn executors() -> [(&'static str, Executor); 2] {
    [("sequential", Executor::sequential()), ("parallel", Executor::default())]
}

fn fine_batch(c: &mut Criterion) {
    let sys = make_fhn(0.2, 0.2, 3.0, [-1.0, 1.0], 0.0, 16.0).unwrap();
    let mesh = TimeMesh::for_system(&sys, SLICES).unwrap();
    let fine = SolverSpec::fine(RkOrder::Four, 2000 * SLICES);
    let starts: Vec<Vec<f64>> = (0..SLICES).map(|j| vec![-1.0 + 0.1 * j as f64, 1.0]).collect();
    let mut group = c.benchmark_group("fine_batch");
    for (name, ex) in executors() {
        group.bench_function(BenchmarkId::new(name, ex.workers()), |b| {
            b.iter(|| {
                ex.map(&starts, |j, u| {
                    Ok::<_, Infallible>(propagate(&sys, &fine, u, mesh.node(j), mesh.node(j + 1)).unwrap())
                })
                .unwrap()
            })
        });
    }
    group.finish();
}

fn solves(c: &mut Criterion) {
    let sys = make_fhn(0.2, 0.2, 3.0, [-1.0, 1.0], 0.0, 16.0).unwrap();
    let mut group = c.benchmark_group("solve");
    group.sample_size(10);
    for (name, ex) in executors() {
        let cfg = SolveConfig::new(
            SolverSpec::fine(RkOrder::Four, 2000 * SLICES),
            SolverSpec::coarse(RkOrder::Two, 8 * SLICES),
            TimeMesh::for_system(&sys, SLICES).unwrap(),
            1e-6,
        )
        .with_executor(ex);
        group.bench_function(BenchmarkId::new(format!("parareal/{name}"), ex.workers()), |b| {
            b.iter(|| run_parareal(&sys, &cfg).unwrap())
        });
        group.bench_function(BenchmarkId::new(format!("gparareal/{name}"), ex.workers()), |b| {
            b.iter(|| run_gparareal(&sys, &cfg, &GpararealOptions::default()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, fine_batch, solves);
criterion_main!(benches);
