use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use wsvad_core::clustering::{kmeans2_restarts, prepare_points, KMeansParams};
use wsvad_core::eval::roc_auc;
use wsvad_core::losses::kmax_loss;
use wsvad_core::model::{backward, forward, init_params};
use wsvad_core::{GraphParams, LayerWidths, Matrix, Rng};

fn features(t: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = Rng::new(seed);
    Matrix::from_fn(t, d, |_, _| rng.normal())
}

fn model(c: &mut Criterion) {
    let mut group = c.benchmark_group("model");
    let params = init_params(32, LayerWidths::default(), &mut Rng::new(0)).unwrap();
    for t in [32, 64, 128] {
        let f = features(t, 32, 1);
        let adj = GraphParams::default().build(&f).unwrap();
        group.bench_with_input(BenchmarkId::new("adjacency", t), &f, |b, f| {
            b.iter(|| GraphParams::default().build(black_box(f)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("forward", t), &t, |b, _| {
            b.iter(|| forward(&params, black_box(&f), &adj, false, 0.0, &mut Rng::new(0)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("forward_backward", t), &t, |b, _| {
            b.iter(|| {
                let trace = forward(&params, black_box(&f), &adj, true, 0.6, &mut Rng::new(0)).unwrap();
                let loss = kmax_loss(trace.scores(), 1).unwrap();
                backward(&trace, &params, &loss.grad_scores, None).unwrap()
            })
        });
    }
    group.finish();
}

fn clustering(c: &mut Criterion) {
    let mut group = c.benchmark_group("kmeans2");
    for n in [512, 2048] {
        let raw = features(n, 128, 2);
        let points = prepare_points(&[&raw], 1e-12).unwrap();
        group.bench_with_input(BenchmarkId::new("restarts_1", n), &points, |b, p| {
            b.iter(|| kmeans2_restarts(black_box(p), None, KMeansParams::default(), 1, &mut Rng::new(3)).unwrap())
        });
    }
    group.finish();
}

fn auc(c: &mut Criterion) {
    let mut group = c.benchmark_group("roc_auc");
    for n in [10_000, 100_000] {
        let mut rng = Rng::new(4);
        let scores: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 1.0)).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.bernoulli(0.3))).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| roc_auc(black_box(&scores), &labels).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, model, clustering, auc);
criterion_main!(benches);
