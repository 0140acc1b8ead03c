//! One worker vs all workers on the data-parallel kernels. Build with
//! `--no-default-features` to time the sequential fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ocplab::control::ClassParams;
use ocplab::geometry::GridDomain;
use ocplab::hammerstein::{apply_b, KernelSpec};
use ocplab::optimizer::{brute_force_small, fd_gradient, OcpProblem};
use ocplab::par;
use ocplab::GridSpec;
use std::hint::black_box;

fn problem(n: usize, segments: [usize; 2]) -> OcpProblem {
    let g = GridSpec::unit(n).unwrap();
    let d = GridDomain::full_interior(g);
    let f = g.sample(|x, y| 2.0 + x * y);
    let gg = g.sample(|x, y| 1.0 + x - y);
    let zd = g.sample(|x, y| 0.3 * (x + y));
    let mut p = OcpProblem::new(d, ClassParams::new(2.0, 0.5, 2.0).unwrap(), f, gg, zd, KernelSpec::gaussian(0.1, 1.0, 0.5)).unwrap();
    p.segments = Some(segments);
    p
}

fn pools() -> Vec<(String, usize)> {
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mode = if cfg!(feature = "parallel") { "rayon" } else { "sequential" };
    let mut v = vec![(format!("{mode}-1"), 1)];
    if cfg!(feature = "parallel") && all > 1 {
        v.push((format!("{mode}-{all}"), all));
    }
    v
}

fn bench(c: &mut Criterion) {
    let g = GridSpec::unit(129).unwrap();
    let d = GridDomain::full_interior(g);
    let w = g.sample(|x, y| (3.0 * x).sin() * y);
    let k = KernelSpec::gaussian(0.1, 1.0, 0.5);
    let mut group = c.benchmark_group("apply_b_129");
    for (name, t) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| par::with_threads(t, || apply_b(&k, black_box(&w), &d)).unwrap())
        });
    }
    group.finish();

    let prob = problem(33, [4, 4]);
    let x = vec![1.2; 8];
    let mut group = c.benchmark_group("fd_gradient_33");
    group.sample_size(10);
    for (name, t) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| par::with_threads(t, || fd_gradient(black_box(&x), &prob, 1e-5).unwrap()).unwrap())
        });
    }
    group.finish();

    let prob = problem(9, [1, 1]);
    let mut group = c.benchmark_group("brute_force_9");
    group.sample_size(10);
    for (name, t) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| par::with_threads(t, || brute_force_small(&prob, 16).unwrap()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
