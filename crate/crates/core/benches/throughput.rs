//! Lattice construction and coverage simulation throughput.
//!
//! With the default `parallel` feature each workload runs on the full rayon
//! pool and on a one-thread pool. `cargo bench --no-default-features`
//! measures the sequential build.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pconj_core::{build_lattice, simulate_coverage, Alpha, CombinerKind, PValueVector, ScenarioSpec};

fn fixture(n: usize) -> PValueVector {
    let ps: Vec<f64> = (0..n).map(|i| ((i * 37 + 11) % 101) as f64 / 101.0 * 0.2 + 1e-4).collect();
    PValueVector::from_pvalues(&ps).unwrap()
}

fn scenario() -> ScenarioSpec {
    ScenarioSpec {
        n: 10,
        k_false: 4,
        effect: 3.0,
        alpha: Alpha::new(0.05).unwrap(),
        combiner: CombinerKind::Fisher,
        replications: 20_000,
        seed: 1,
    }
}

#[cfg(feature = "parallel")]
fn modes() -> Vec<(&'static str, Option<rayon::ThreadPool>)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![("parallel", None), ("one_thread", Some(one))]
}

#[cfg(not(feature = "parallel"))]
fn modes() -> Vec<(&'static str, Option<()>)> {
    vec![("sequential", None)]
}

#[cfg(feature = "parallel")]
fn run<R: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run<R: Send>(_: &Option<()>, f: impl FnOnce() -> R + Send) -> R {
    f()
}

fn lattice(c: &mut Criterion) {
    let alpha = Alpha::new(0.05).unwrap();
    let mut group = c.benchmark_group("build_lattice");
    group.sample_size(10);
    for n in [12usize, 16, 18] {
        let v = fixture(n);
        for (mode, pool) in &modes() {
            group.bench_with_input(BenchmarkId::new(*mode, n), &v, |b, v| {
                b.iter(|| run(pool, || build_lattice(black_box(v), alpha, CombinerKind::Fisher).unwrap()))
            });
        }
    }
    group.finish();
}

fn coverage(c: &mut Criterion) {
    let spec = scenario();
    let mut group = c.benchmark_group("simulate_coverage");
    group.sample_size(10);
    for (mode, pool) in &modes() {
        group.bench_function(*mode, |b| b.iter(|| run(pool, || simulate_coverage(black_box(&spec)).unwrap())));
    }
    group.finish();
}

criterion_group!(benches, lattice, coverage);
criterion_main!(benches);
