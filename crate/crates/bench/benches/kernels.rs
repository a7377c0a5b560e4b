use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use pace_core::classifier::{loss_and_grad, LinearClassifier, LossTerm};
use pace_core::coral::{coral_align, CoralConfig};
use pace_core::feature_io::l2_normalize;
use pace_core::linalg::{covariance, matrix_power_half, sym_eig, HalfPower};
use pace_core::synthetic::generate;
use pace_core::SynthConfig;

fn bench_loss_and_grad(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_and_grad");
    for n in [500usize, 2000] {
        let cfg = SynthConfig {
            n_source: n,
            n_target: n,
            ..SynthConfig::default()
        };
        let b = generate(&cfg).unwrap();
        let x = l2_normalize(&b.source.features).unwrap();
        let w = LinearClassifier::zeros(cfg.num_classes, cfg.d);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let terms = [LossTerm::unmasked(&x, &b.source.labels, 0.4)];
                black_box(loss_and_grad(&w, &terms).unwrap())
            })
        });
    }
    group.finish();
}

fn bench_eig(c: &mut Criterion) {
    let mut group = c.benchmark_group("sym_eig");
    for d in [32usize, 128] {
        let b = generate(&SynthConfig {
            d,
            ..SynthConfig::default()
        })
        .unwrap();
        let cov = covariance(&b.source.features).unwrap();
        group.bench_with_input(BenchmarkId::new("eig", d), &d, |bench, _| {
            bench.iter(|| black_box(sym_eig(&cov).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("inv_sqrt", d), &d, |bench, _| {
            bench.iter(|| black_box(matrix_power_half(&cov, HalfPower::InvSqrt, 1e-3).unwrap()))
        });
    }
    group.finish();
}

fn bench_coral(c: &mut Criterion) {
    let b = generate(&SynthConfig::default()).unwrap();
    c.bench_function("coral_align/2000x32", |bench| {
        bench.iter(|| {
            black_box(coral_align(&b.source.features, None, &b.target_unlabeled, &CoralConfig::default()).unwrap())
        })
    });
}

criterion_group!(benches, bench_loss_and_grad, bench_eig, bench_coral);
criterion_main!(benches);
