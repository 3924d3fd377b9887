//! Reference implementations used as oracles by the integration tests.
//! None of them call into the crate's numerical kernels.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ckpd_core::covariance::input_covariance;
use ckpd_core::net::InputNorm;
use ckpd_core::{
    capture_activations, decompose, loss_and_grads, rng, Activation, Backbone, ClassId,
    CovarianceBuffer, GradientTape, KpdConfig, Layer, Matrix, PrototypeClassifier, Sample,
    TrainableSet,
};
use nalgebra::DMatrix;

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut g = rng::stream(seed, 1000);
    Matrix::new(rows, cols, rng::normal_vec(&mut g, rows * cols, 1.0)).unwrap()
}

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> Matrix {
    let mut data = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            data.push(m[(i, j)]);
        }
    }
    Matrix::new(m.nrows(), m.ncols(), data).unwrap()
}

/// Plain triple loop product.
pub fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols(), b.rows());
    let mut out = vec![0.0; a.rows() * b.cols()];
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut acc = 0.0;
            for k in 0..a.cols() {
                acc += a[(i, k)] * b[(k, j)];
            }
            out[i * b.cols() + j] = acc;
        }
    }
    Matrix::new(a.rows(), b.cols(), out).unwrap()
}

pub fn naive_transpose(a: &Matrix) -> Matrix {
    let mut out = Vec::with_capacity(a.rows() * a.cols());
    for j in 0..a.cols() {
        for i in 0..a.rows() {
            out.push(a[(i, j)]);
        }
    }
    Matrix::new(a.cols(), a.rows(), out).unwrap()
}

pub fn frob(a: &Matrix) -> f64 {
    a.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn rel_frob_diff(a: &Matrix, b: &Matrix) -> f64 {
    let diff: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / frob(b).max(1e-30)
}

/// Classical Jacobi eigensolver for a symmetric matrix: repeatedly zeroes
/// the largest off-diagonal entry. Returns eigenvalues in descending order
/// and the matching eigenvectors as columns.
pub fn jacobi_eigen(sym: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = sym.len();
    let mut a: Vec<Vec<f64>> = sym.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for _ in 0..(100 * n * n).max(100) {
        let (mut p, mut q, mut big) = (0, 1, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                if a[i][j].abs() > big {
                    big = a[i][j].abs();
                    p = i;
                    q = j;
                }
            }
        }
        if big <= 1e-17 * scale {
            break;
        }
        let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let t = if theta == 0.0 { 1.0 } else { t };
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        for k in 0..n {
            let (akp, akq) = (a[k][p], a[k][q]);
            a[k][p] = c * akp - s * akq;
            a[k][q] = s * akp + c * akq;
        }
        for k in 0..n {
            let (apk, aqk) = (a[p][k], a[q][k]);
            a[p][k] = c * apk - s * aqk;
            a[q][k] = s * apk + c * aqk;
        }
        for row in v.iter_mut() {
            let (vkp, vkq) = (row[p], row[q]);
            row[p] = c * vkp - s * vkq;
            row[q] = s * vkp + c * vkq;
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap());
    let vals = idx.iter().map(|&i| a[i][i]).collect();
    let vecs = idx
        .iter()
        .map(|&i| (0..n).map(|k| v[k][i]).collect())
        .collect();
    (vals, vecs)
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Singular values from the Jacobi oracle on the smaller Gram matrix.
pub fn oracle_singular_values(m: &Matrix) -> Vec<f64> {
    let gram = if m.rows() <= m.cols() {
        naive_matmul(m, &naive_transpose(m))
    } else {
        naive_matmul(&naive_transpose(m), m)
    };
    jacobi_eigen(&to_rows(&gram))
        .0
        .into_iter()
        .map(|e| e.max(0.0).sqrt())
        .collect()
}

/// Largest singular value via nalgebra.
pub fn oracle_spectral_norm(m: &Matrix) -> f64 {
    to_na(m).singular_values().max()
}

/// Random symmetric PSD matrix `G Gᵀ / k` with `G` of shape `d × k`; rank
/// is `min(d, k)`.
pub fn psd(d: usize, k: usize, seed: u64) -> Matrix {
    let g = gaussian(d, k, seed);
    let s = naive_matmul(&g, &naive_transpose(&g));
    let f = 1.0 / k as f64;
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            out.push(0.5 * (s[(i, j)] + s[(j, i)]) * f);
        }
    }
    Matrix::new(d, d, out).unwrap()
}

/// Replays the regularization schedule with nalgebra's LU inverse and SVD
/// norm: λ = 0 first, then λ₀·2^k. Returns the first accepted λ.
pub fn replay_lambda(sigma: &Matrix, lambda0: f64, threshold: f64, max_doublings: usize) -> Option<f64> {
    let s = to_na(sigma);
    let d = s.nrows();
    let mean_diag = s.diagonal().sum() / d as f64;
    let eye = DMatrix::<f64>::identity(d, d);
    let accept = |lambda: f64| -> bool {
        let st = &s + &eye * (lambda * mean_diag);
        match st.clone().try_inverse() {
            Some(inv) => {
                let r = &st * inv - &eye;
                r.iter().all(|v| v.is_finite()) && r.singular_values().max() <= threshold
            }
            None => false,
        }
    };
    if accept(0.0) {
        return Some(0.0);
    }
    (0..=max_doublings)
        .map(|k| lambda0 * 2f64.powi(k as i32))
        .find(|&l| accept(l))
}

/// `(1/M) Σₖ f_k f_kᵀ` accumulated one column at a time.
pub fn outer_product_covariance(f: &Matrix) -> Matrix {
    let (d, m) = f.shape();
    let mut acc = vec![0.0; d * d];
    for k in 0..m {
        for i in 0..d {
            for j in 0..d {
                acc[i * d + j] += f[(i, k)] * f[(j, k)];
            }
        }
    }
    acc.iter_mut().for_each(|v| *v /= m as f64);
    Matrix::new(d, d, acc).unwrap()
}

/// Sort by (score, layer id) and take the first `k` ids.
pub fn brute_force_select(scores: &[(usize, f64)], k: usize) -> (Vec<usize>, Vec<usize>) {
    let mut all = scores.to_vec();
    for i in 0..all.len() {
        for j in 0..all.len() - 1 - i {
            let (a, b) = (all[j], all[j + 1]);
            if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) {
                all.swap(j, j + 1);
            }
        }
    }
    let ranking: Vec<usize> = all.iter().map(|s| s.0).collect();
    let mut selected = ranking[..k].to_vec();
    selected.sort_unstable();
    (ranking, selected)
}

pub fn asr_oracle(s: &[f64], r: usize) -> f64 {
    let mut total = 0.0;
    for v in s {
        total += v;
    }
    let mut bottom = 0.0;
    for v in &s[s.len() - r..] {
        bottom += v;
    }
    bottom / total
}

/// Central finite difference of `f` at `x` along every coordinate.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|g − fd| / max(|g|, 1e-8)` with `g` the analytic value.
pub fn grad_rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1e-8)
}

pub fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn prototypes(classes: u32, dim: usize, seed: u64) -> PrototypeClassifier {
    let m = gaussian(classes as usize, dim, seed);
    let map: BTreeMap<ClassId, Vec<f64>> = (0..classes)
        .map(|c| (ClassId(c), unit(m.row(c as usize).to_vec())))
        .collect();
    PrototypeClassifier::from_prototypes(16.0, map).unwrap()
}

pub fn batch(n: usize, dim: usize, classes: u32, seed: u64) -> Vec<Sample> {
    let m = gaussian(n, dim, seed);
    (0..n)
        .map(|i| Sample { input: m.row(i).to_vec(), label: ClassId(i as u32 % classes) })
        .collect()
}

/// Replaces `layers` of a random model with covariance-aware decompositions
/// built from a handful of random inputs.
pub fn with_adapters(model: Backbone, layers: &[usize], rank: usize, zero_b: bool, seed: u64) -> Backbone {
    let buf = CovarianceBuffer::new(seed)
        .update(
            &(0..4)
                .map(|c| (ClassId(c), vec![gaussian(1, model.input_dim(), seed + 10 * c as u64).into_vec()]))
                .collect::<Vec<_>>(),
        )
        .unwrap();
    let caps = capture_activations(&model, &buf).unwrap();
    let mut out = model.clone();
    for &l in layers {
        let sigma = input_covariance(&caps[l].features).unwrap();
        let mut d = decompose(&model.weight(l), &sigma, &KpdConfig::with_rank(rank)).unwrap().with_layer_id(l);
        if zero_b {
            d.b = Matrix::zeros(d.b.rows(), d.b.cols());
        }
        out.install(d).unwrap();
    }
    out
}

/// Writes `theta` into the parameters covered by a tape, in the tape's
/// flattening order.
pub fn set_params(model: &Backbone, clf: &PrototypeClassifier, tape: &GradientTape, theta: &[f64]) -> (Backbone, PrototypeClassifier) {
    let mut k = 0;
    let mut take = |n: usize| {
        let s = theta[k..k + n].to_vec();
        k += n;
        s
    };
    let mut layers = Vec::new();
    for (l, layer) in model.layers().iter().enumerate() {
        layers.push(match (layer, &tape.layers[l]) {
            (Layer::Decomposed(d), Some(_)) => {
                let mut d = d.clone();
                d.b = Matrix::new(d.b.rows(), d.b.cols(), take(d.b.rows() * d.b.cols())).unwrap();
                d.a = Matrix::new(d.a.rows(), d.a.cols(), take(d.a.rows() * d.a.cols())).unwrap();
                Layer::Decomposed(d)
            }
            (Layer::Plain(w), Some(_)) => Layer::Plain(Matrix::new(w.rows(), w.cols(), take(w.rows() * w.cols())).unwrap()),
            (other, None) => other.clone(),
        });
    }
    let mut protos = clf.prototypes().clone();
    for c in tape.prototypes.keys() {
        let n = protos[c].len();
        protos.insert(*c, take(n));
    }
    (
        Backbone::from_layers(layers, model.activation(), model.input_norm()).unwrap(),
        PrototypeClassifier::from_prototypes(clf.temperature(), protos).unwrap(),
    )
}

pub fn check_gradients(model: &Backbone, clf: &PrototypeClassifier, batch: &[Sample], trainable: &TrainableSet) -> (usize, f64) {
    let (_, tape) = loss_and_grads(model, clf, batch, trainable).unwrap();
    let theta = {
        let mut v = Vec::new();
        for (l, layer) in model.layers().iter().enumerate() {
            match (layer, &tape.layers[l]) {
                (Layer::Decomposed(d), Some(_)) => {
                    v.extend_from_slice(d.b.as_slice());
                    v.extend_from_slice(d.a.as_slice());
                }
                (Layer::Plain(w), Some(_)) => v.extend_from_slice(w.as_slice()),
                _ => {}
            }
        }
        for c in tape.prototypes.keys() {
            v.extend_from_slice(clf.prototype(*c).unwrap());
        }
        assert_eq!(v.len(), tape.flatten().len());
        v
    };
    let fd = central_difference(
        |t| {
            let (m, c) = set_params(model, clf, &tape, t);
            loss_and_grads(&m, &c, batch, &TrainableSet::default()).unwrap().0
        },
        &theta,
        1e-6,
    );
    let g = tape.flatten();
    let worst = g.iter().zip(&fd).map(|(a, n)| grad_rel_err(*a, *n)).fold(0.0, f64::max);
    (g.len(), worst)
}

pub fn architectures(seed: u64) -> Vec<(&'static str, Backbone, TrainableSet, u32)> {
    let protos = |ids: &[u32]| ids.iter().map(|c| ClassId(*c)).collect::<Vec<_>>();
    vec![
        (
            "three-layer, two adapters",
            with_adapters(Backbone::random(&[6, 8, 7, 5], seed).unwrap(), &[0, 2], 2, false, seed),
            TrainableSet::adapters_only(protos(&[2, 3])),
            4,
        ),
        (
            "four-layer, zero adapter in the middle",
            with_adapters(Backbone::random(&[5, 7, 6, 6, 4], seed + 100).unwrap(), &[1], 2, true, seed),
            TrainableSet::adapters_only(protos(&[4])),
            5,
        ),
        (
            "two-layer dense",
            Backbone::random(&[4, 6, 3], seed + 200).unwrap(),
            TrainableSet {
                dense_layers: [0, 1].into_iter().collect(),
                prototypes: protos(&[0, 1, 2]).into_iter().collect(),
            },
            3,
        ),
        (
            "unnormalized identity stack, adapters on both layers",
            {
                let m = Backbone::random(&[5, 5, 4], seed + 300).unwrap();
                let w: Vec<Matrix> = (0..2).map(|l| m.weight(l).scale(0.5)).collect();
                with_adapters(Backbone::new(w, Activation::Identity, InputNorm::None).unwrap(), &[0, 1], 1, false, seed)
            },
            TrainableSet::adapters_only(protos(&[1])),
            3,
        ),
    ]
}
