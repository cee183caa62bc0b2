use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ge_remote::dp_threshold::{backward_induction, extract_thresholds, Ar1Problem, SolverGrid, ThresholdMode};
use ge_remote::models::{Ar1Source, DistortionFn, GilbertElliottChannel, NoiseSpec};
use ge_remote::simulator::monte_carlo_cost;

fn problem() -> Ar1Problem {
    Ar1Problem {
        source: Ar1Source::new(1.0, NoiseSpec::gaussian(1.0)).unwrap(),
        channel: GilbertElliottChannel::new([[0.7, 0.3], [0.2, 0.8]], [0.4, 0.6]).unwrap(),
        distortion: DistortionFn::Squared,
        lambda: 2.0,
        horizon: 10,
    }
}

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        ("sequential", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("parallel", rayon::ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn bench_backward_induction(c: &mut Criterion) {
    let p = problem();
    let mut group = c.benchmark_group("backward_induction");
    group.sample_size(10);
    for n in [1025usize, 4097] {
        let grid = SolverGrid::new(60.0, n).unwrap();
        for (name, pool) in pools() {
            group.bench_with_input(BenchmarkId::new(name, n), &grid, |b, g| {
                b.iter(|| pool.install(|| backward_induction(black_box(&p), *g).unwrap()))
            });
        }
    }
    group.finish();
}

fn bench_monte_carlo(c: &mut Criterion) {
    let p = problem();
    let vg = backward_induction(&p, SolverGrid::new(60.0, 2049).unwrap()).unwrap();
    let k = extract_thresholds(&vg, ThresholdMode::Refined).unwrap();
    let mut group = c.benchmark_group("monte_carlo_cost");
    group.sample_size(10);
    for reps in [10_000usize, 100_000] {
        for (name, pool) in pools() {
            group.bench_with_input(BenchmarkId::new(name, reps), &reps, |b, &r| {
                b.iter(|| pool.install(|| monte_carlo_cost(black_box(&p), &k, 10, r, 1).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_backward_induction, bench_monte_carlo);
criterion_main!(benches);
