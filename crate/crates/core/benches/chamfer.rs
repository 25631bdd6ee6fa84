//! Chamfer distance: brute force vs kd-tree, and the data-parallel path vs a
//! single worker thread. Build with `--no-default-features` to measure the
//! sequential fallback instead of rayon.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelpaint::chamfer::{chamfer_max, NnMethod};
use skelpaint::par;

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 6]> {
    (0..n)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
        .collect()
}

fn bench_methods(c: &mut Criterion) {
    let mode = if par::is_parallel() { "rayon" } else { "sequential" };
    let mut group = c.benchmark_group(format!("chamfer/{mode}"));
    group.sample_size(10);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [256, 1024, 4096] {
        let (a, b) = (cloud(&mut rng, n), cloud(&mut rng, n));
        for method in [NnMethod::BruteForce, NnMethod::KdTree] {
            if method == NnMethod::BruteForce && n > 1024 {
                continue;
            }
            group.bench_with_input(BenchmarkId::new(format!("{method:?}"), n), &n, |bench, _| {
                bench.iter(|| chamfer_max(&a, &b, method).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_threads(c: &mut Criterion) {
    let mut group = c.benchmark_group("chamfer/threads");
    group.sample_size(10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (a, b) = (cloud(&mut rng, 4096), cloud(&mut rng, 4096));
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    group.bench_function("all-cores", |bench| {
        bench.iter(|| chamfer_max(&a, &b, NnMethod::KdTree).unwrap())
    });
    group.bench_function("one-thread", |bench| {
        bench.iter(|| single.install(|| chamfer_max(&a, &b, NnMethod::KdTree).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, bench_methods, bench_threads);
criterion_main!(benches);
