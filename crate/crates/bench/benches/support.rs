use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use robustrl::dp::robust_value_iteration;
use robustrl::envs::random_mdp;
use robustrl::{ConfidenceRegion, Regions};

fn vector(n: usize) -> Vec<f64> {
    (0..n).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect()
}

fn support(c: &mut Criterion) {
    let mut group = c.benchmark_group("support");
    for n in [4, 16, 64] {
        let v = vector(n);
        let a = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 + i as f64 } else { 0.1 / (1 + i + j) as f64 });
        let b = DMatrix::from_fn(n, n, |i, j| if i == j { 3.0 } else { 0.2 * ((i + j) % 3) as f64 });
        let regions = [
            ("l2", ConfidenceRegion::l2(0.2).unwrap()),
            ("l1", ConfidenceRegion::l1(0.2).unwrap()),
            ("ellipsoid", ConfidenceRegion::ellipsoid(&a).unwrap()),
            ("parallelepiped", ConfidenceRegion::parallelepiped(&b).unwrap()),
        ];
        for (name, region) in &regions {
            group.bench_with_input(BenchmarkId::new(*name, n), &v, |bench, v| {
                bench.iter(|| region.support(black_box(v)).unwrap())
            });
        }
    }
    group.finish();
}

fn value_iteration(c: &mut Criterion) {
    let mut group = c.benchmark_group("robust_value_iteration");
    group.sample_size(10);
    let regions = Regions::shared(ConfidenceRegion::l2(0.1).unwrap());
    for n in [8, 16] {
        let mdp = random_mdp(n, 4, 5, 1).unwrap();
        for (name, constrained) in [("proxy", false), ("simplex", true)] {
            group.bench_function(BenchmarkId::new(name, n), |bench| {
                bench.iter(|| robust_value_iteration(black_box(&mdp), &regions, constrained, 1e-8).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, support, value_iteration);
criterion_main!(benches);
