//! Monte Carlo ensembles, sequential against rayon-parallel.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use sgflow::simulate::{monte_carlo, EnsembleSpec, NoiseRoot, SgdConfig, TrajectoryKind};
use sgflow::{Execution, ProblemSpec};

fn ensembles(c: &mut Criterion) {
    let problem = ProblemSpec::gaussian(50, 10, 0.5, 1).build().unwrap();
    let config = SgdConfig::new(0.01, 10, 200, 7);
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    let cases = [
        ("sgd", TrajectoryKind::Sgd, NoiseRoot::Symmetric),
        ("euler_factored", TrajectoryKind::EulerSgf, NoiseRoot::Factored),
    ];
    for (name, kind, root) in cases {
        for exec in [Execution::Sequential, Execution::Parallel] {
            let spec = EnsembleSpec::new(kind, 2000, vec![50, 100, 200])
                .with_root(root)
                .with_execution(exec);
            group.bench_with_input(BenchmarkId::new(name, format!("{exec:?}")), &spec, |b, spec| {
                b.iter(|| black_box(monte_carlo(&problem, &config, spec).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, ensembles);
criterion_main!(benches);
