use std::hint::black_box;

use ckpd_core::fscil::TrainConfig;
use ckpd_core::{
    capture_activations, compute_input_covariance, decompose, loss_and_grads, regularized_inverse,
    rng, session_selection, svd, Backbone, ClassId, CovarianceBuffer, KpdConfig, Matrix,
    PrototypeClassifier, Sample, TrainableSet,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut g = rng::stream(seed, 0);
    Matrix::new(rows, cols, rng::normal_vec(&mut g, rows * cols, 1.0)).unwrap()
}

fn buffer(dim: usize, classes: u32) -> CovarianceBuffer {
    let data: Vec<(ClassId, Vec<Vec<f64>>)> = (0..classes)
        .map(|c| (ClassId(c), vec![gaussian(1, dim, 100 + c as u64).into_vec()]))
        .collect();
    CovarianceBuffer::new(0).update(&data).unwrap()
}

fn bench_svd(c: &mut Criterion) {
    let mut group = c.benchmark_group("svd");
    for n in [16, 32, 64] {
        let m = gaussian(n, n, n as u64);
        group.bench_with_input(BenchmarkId::from_parameter(n), &m, |b, m| b.iter(|| svd(black_box(m)).unwrap()));
    }
    group.finish();
}

fn bench_decompose(c: &mut Criterion) {
    let w = gaussian(64, 64, 1);
    let model = Backbone::random(&[64, 64], 2).unwrap();
    let caps = capture_activations(&model, &buffer(64, 40)).unwrap();
    let sigma = compute_input_covariance(&caps[0]).unwrap();
    let cfg = KpdConfig::default();
    c.bench_function("regularized_inverse 64 (rank-deficient)", |b| {
        b.iter(|| regularized_inverse(black_box(&sigma), cfg.lambda0, cfg.inverse_threshold, cfg.max_doublings).unwrap())
    });
    c.bench_function("decompose 64x64 r=4", |b| b.iter(|| decompose(black_box(&w), &sigma, &cfg).unwrap()));
}

fn bench_selection(c: &mut Criterion) {
    let model = Backbone::random(&[32, 64, 64, 64, 64, 64, 32], 3).unwrap();
    let buf = buffer(32, 40);
    let cfg = TrainConfig::default();
    c.bench_function("session_selection default backbone, 40 exemplars", |b| {
        b.iter(|| session_selection(black_box(&model), &buf, &cfg.kpd, cfg.k_layers, 1).unwrap())
    });
}

fn bench_grads(c: &mut Criterion) {
    let model = Backbone::random(&[32, 64, 64, 64, 64, 64, 32], 4).unwrap();
    let mut clf = PrototypeClassifier::new(16.0).unwrap();
    for k in 0..25u32 {
        clf.set_prototype(ClassId(k), &gaussian(1, 32, 200 + k as u64).into_vec()).unwrap();
    }
    let x = gaussian(64, 32, 5);
    let batch: Vec<Sample> = (0..64)
        .map(|i| Sample { input: x.row(i).to_vec(), label: ClassId(i as u32 % 25) })
        .collect();
    let all = TrainableSet::all_dense(&model, clf.classes());
    c.bench_function("loss_and_grads batch 64, all layers", |b| {
        b.iter(|| loss_and_grads(black_box(&model), &clf, &batch, &all).unwrap())
    });
}

criterion_group!(benches, bench_svd, bench_decompose, bench_selection, bench_grads);
criterion_main!(benches);
