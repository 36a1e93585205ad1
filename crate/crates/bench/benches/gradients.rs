//! Wall-time of one gradient estimate per estimator — the cost of a single
//! optimizer iteration — on a shared set of draws, plus how the plain and
//! Rao-Blackwellized estimators scale with the component count.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use bbvi_core::estimators::{estimate_gradient, EstimatorKind};
use bbvi_core::model::{
    draw_latents, generate_gmm_data, init_params, Dataset, GmmSpec, LatentDraw,
    VariationalParams, DEFAULT_COMPONENT_MEANS,
};

const ALL_KINDS: [EstimatorKind; 4] = [
    EstimatorKind::Naive,
    EstimatorKind::JsPlus,
    EstimatorKind::Rb,
    EstimatorKind::RbPlus,
];

/// A ready-to-estimate instance: simulated data, an initialized parameter
/// vector, and a fixed set of draws shared by every estimator.
fn instance(k: usize, n: usize, s: usize) -> (GmmSpec, Dataset, VariationalParams, Vec<LatentDraw>) {
    let spec = GmmSpec::new(k, 1, 10.0, 3.0).expect("valid spec");
    let data = generate_gmm_data(k, n, &DEFAULT_COMPONENT_MEANS[..k], 3.0, 7)
        .expect("data generation");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let lam = init_params(&spec, &data, &mut rng).expect("initialization");
    let draws = draw_latents(&lam, s, &mut rng);
    (spec, data, lam, draws)
}

fn bench_estimators(c: &mut Criterion) {
    let (spec, data, lam, draws) = instance(5, 200, 100);
    let mut group = c.benchmark_group("gradient_estimate/k5_n200_s100");
    for kind in ALL_KINDS {
        group.bench_function(kind.name(), |b| {
            b.iter(|| {
                estimate_gradient(kind, &spec, &data, &lam, black_box(&draws))
                    .expect("estimate succeeds")
            })
        });
    }
    group.finish();
}

fn bench_scaling(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimator_scaling_s50");
    for k in [2usize, 5, 10] {
        let (spec, data, lam, draws) = instance(k, 200, 50);
        for kind in [EstimatorKind::Naive, EstimatorKind::Rb] {
            group.bench_with_input(BenchmarkId::new(kind.name(), k), &k, |b, _| {
                b.iter(|| {
                    estimate_gradient(kind, &spec, &data, &lam, black_box(&draws))
                        .expect("estimate succeeds")
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_estimators, bench_scaling);
criterion_main!(benches);
