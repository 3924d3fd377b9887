mod common;

use ckpd_core::covariance::input_covariance;
use ckpd_core::net::InputNorm;
use ckpd_core::numkernel::symmetric_eigenvalues;
use ckpd_core::{
    capture_activations, compute_input_covariance, ActivationCapture, Activation, Backbone,
    ClassId, CovarianceBuffer, Error, Matrix,
};
use common::*;
use proptest::prelude::*;

fn classes(seed: u64, ids: std::ops::Range<u32>, per_class: usize, dim: usize) -> Vec<(ClassId, Vec<Vec<f64>>)> {
    ids.map(|c| {
        let m = gaussian(per_class, dim, seed ^ (c as u64 * 7919));
        (ClassId(c), (0..per_class).map(|i| m.row(i).to_vec()).collect())
    })
    .collect()
}

#[test]
fn covariance_of_single_column() {
    let f = Matrix::from_rows(&[[1.0], [0.0]]).unwrap();
    let cap = ActivationCapture { layer_id: 0, features: f };
    assert_eq!(
        compute_input_covariance(&cap).unwrap(),
        Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap()
    );
}

#[test]
fn covariance_of_identity_features() {
    let cap = ActivationCapture { layer_id: 0, features: Matrix::identity(2) };
    assert_eq!(compute_input_covariance(&cap).unwrap(), Matrix::from_diag(&[0.5, 0.5]));
}

#[test]
fn covariance_matches_outer_product_oracle() {
    let f = gaussian(4, 10, 21);
    let ours = input_covariance(&f).unwrap();
    assert!(max_abs_diff(&ours, &outer_product_covariance(&f)) <= 1e-14);
}

#[test]
fn empty_capture_is_degenerate() {
    let cap = ActivationCapture { layer_id: 0, features: Matrix::zeros(3, 0) };
    assert!(matches!(compute_input_covariance(&cap), Err(Error::DegenerateCovariance(_))));
}

#[test]
fn buffer_growth_is_deterministic() {
    let start = CovarianceBuffer::new(42).update(&classes(1, 0..3, 4, 6)).unwrap();
    assert_eq!(start.len(), 3);
    let new = classes(42, 3..5, 5, 6);
    let a = start.update(&new).unwrap();
    let b = start.update(&new).unwrap();
    assert_eq!(a.len(), 5);
    assert_eq!(a, b);
    // Existing exemplars are kept unchanged.
    assert_eq!(&a.exemplars()[..3], start.exemplars());
    for (e, (c, samples)) in a.exemplars()[3..].iter().zip(&new) {
        assert_eq!(e.class_id, *c);
        assert!(samples.contains(&e.input));
    }
}

#[test]
fn overlapping_class_is_rejected() {
    let buf = CovarianceBuffer::new(0).update(&classes(1, 0..2, 2, 3)).unwrap();
    assert!(matches!(buf.update(&classes(2, 1..3, 2, 3)), Err(Error::DuplicateClass(ClassId(1)))));
}

#[test]
fn buffer_file_round_trip() {
    let buf = CovarianceBuffer::new(3).update(&classes(5, 0..4, 3, 5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("buffer.txt");
    buf.save(&path).unwrap();
    assert_eq!(CovarianceBuffer::load(&path, 3).unwrap(), buf);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("CKPD-BUF v1 4 5\n"));
}

#[test]
fn identity_layer_capture_is_the_exemplar() {
    let model = Backbone::new(vec![Matrix::identity(3)], Activation::Tanh, InputNorm::None).unwrap();
    let x = vec![0.3, -0.2, 0.5];
    let buf = CovarianceBuffer::new(0).update(&[(ClassId(0), vec![x.clone()])]).unwrap();
    let caps = capture_activations(&model, &buf).unwrap();
    assert_eq!(caps.len(), 1);
    assert_eq!(caps[0].features.column(0), x);
}

#[test]
fn hand_traced_two_layer_capture() {
    let model = Backbone::new(
        vec![Matrix::from_diag(&[2.0, 2.0]), Matrix::identity(2)],
        Activation::Identity,
        InputNorm::None,
    )
    .unwrap();
    let buf = CovarianceBuffer::new(0).update(&[(ClassId(0), vec![vec![1.0, 0.0]])]).unwrap();
    let caps = capture_activations(&model, &buf).unwrap();
    assert_eq!(caps[0].features.column(0), vec![1.0, 0.0]);
    assert_eq!(caps[1].features.column(0), vec![2.0, 0.0]);
}

#[test]
fn capture_matches_truncated_forward() {
    let model = Backbone::random(&[5, 7, 6, 4], 13).unwrap();
    let buf = CovarianceBuffer::new(1).update(&classes(8, 0..5, 2, 5)).unwrap();
    let caps = capture_activations(&model, &buf).unwrap();
    for (k, e) in buf.exemplars().iter().enumerate() {
        // Re-run the stack by hand one layer at a time.
        let mut h = e.input.clone();
        for (l, cap) in caps.iter().enumerate() {
            let n = (h.iter().map(|v| v * v).sum::<f64>()).sqrt();
            let x: Vec<f64> = h.iter().map(|v| v / n).collect();
            assert_eq!(cap.features.column(k), x, "layer {l} exemplar {k}");
            let w = model.weight(l);
            let z: Vec<f64> = (0..w.rows())
                .map(|i| (0..w.cols()).map(|j| w[(i, j)] * x[j]).sum::<f64>())
                .collect();
            h = if l + 1 < caps.len() { z.iter().map(|v| v.tanh()).collect() } else { z };
        }
    }
}

#[test]
fn empty_buffer_rejected() {
    let model = Backbone::random(&[3, 3], 1).unwrap();
    assert!(matches!(
        capture_activations(&model, &CovarianceBuffer::new(0)),
        Err(Error::EmptyBuffer)
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn covariance_is_symmetric_psd_and_conserved(d in 1usize..10, m in 1usize..15, d_out in 1usize..8, seed in any::<u64>()) {
        let f = gaussian(d, m, seed);
        let sigma = input_covariance(&f).unwrap();
        let asym = max_abs_diff(&sigma, &naive_transpose(&sigma));
        prop_assert!(asym <= 1e-12);
        let eig = symmetric_eigenvalues(&sigma).unwrap();
        prop_assert!(eig.iter().all(|e| *e >= -1e-10));
        let w = gaussian(d_out, d, seed.wrapping_add(1));
        let y = naive_matmul(&w, &f);
        let empirical = outer_product_covariance(&y);
        let predicted = naive_matmul(&naive_matmul(&w, &sigma), &naive_transpose(&w));
        prop_assert!(max_abs_diff(&empirical, &predicted) <= 1e-10);
    }

    #[test]
    fn buffer_size_tracks_seen_classes(sizes in prop::collection::vec(1u32..5, 1..6), seed in any::<u64>()) {
        let mut buf = CovarianceBuffer::new(seed);
        let mut next = 0;
        for s in sizes {
            buf = buf.update(&classes(seed, next..next + s, 2, 3)).unwrap();
            next += s;
            prop_assert_eq!(buf.len(), next as usize);
        }
    }
}
