//! Knowledge-preserving decomposition of a single linear layer.
//!
//! `W·Σ̃` is factored by SVD. The `r` weakest components, mapped back to the
//! weight space through `Σ̃⁻¹`, become a trainable low-rank adapter `B·A`
//! whose factors share the square roots of their singular values. The frozen
//! part is the exact residual `W − B·A`, so `W_frozen + B·A` reproduces `W`
//! regardless of round-off in the SVD or the inverse.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::io::{load_matrix, save_matrix};
use crate::numkernel::{
    norm2, regularized_inverse, svd, Matrix, DEFAULT_INVERSE_THRESHOLD, DEFAULT_LAMBDA0,
    DEFAULT_MAX_DOUBLINGS,
};
use crate::rng;
use crate::LayerId;

pub const DEFAULT_RANK: usize = 4;

/// How the magnitude of each rank-one adapter term is split between `B`
/// and `A`. Both choices give the same product `B·A` and `W_frozen`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorScaling {
    /// `B = U·diag(√s)`, `A = diag(√s)·VᵀΣ̃⁻¹`.
    Sqrt,
    /// Column `j` of `B` and row `j` of `A` get equal norms. Differs from
    /// `Sqrt` only when the rows of `VᵀΣ̃⁻¹` are not unit length, i.e. for a
    /// non-identity covariance. Keeps gradient steps on `B` and `A` on the
    /// same scale when the covariance is nearly singular.
    #[default]
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpdConfig {
    pub rank_r: usize,
    pub lambda0: f64,
    pub inverse_threshold: f64,
    pub max_doublings: usize,
    #[serde(default)]
    pub scaling: FactorScaling,
}

impl Default for KpdConfig {
    fn default() -> Self {
        Self {
            rank_r: DEFAULT_RANK,
            lambda0: DEFAULT_LAMBDA0,
            inverse_threshold: DEFAULT_INVERSE_THRESHOLD,
            max_doublings: DEFAULT_MAX_DOUBLINGS,
            scaling: FactorScaling::default(),
        }
    }
}

impl KpdConfig {
    pub fn with_rank(rank_r: usize) -> Self {
        Self {
            rank_r,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank_r == 0 {
            return Err(Error::InvalidRank { rank: 0, len: 0 });
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda0 must be positive, got {}", self.lambda0)));
        }
        if !(self.inverse_threshold > 0.0 && self.inverse_threshold.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "inverse_threshold must be positive, got {}",
                self.inverse_threshold
            )));
        }
        Ok(())
    }
}

/// A weight split as `w_frozen + b·a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposedLayer {
    pub layer_id: LayerId,
    /// `d_out × d_in`, never modified by training.
    pub w_frozen: Matrix,
    /// `d_out × r`
    pub b: Matrix,
    /// `r × d_in`
    pub a: Matrix,
    /// All `R = min(d_out, d_in)` singular values of `W·Σ̃`, descending.
    pub singular_values: Vec<f64>,
    pub rank_r: usize,
    /// Diagonal shift used to invert the covariance (0 if none was needed).
    pub lambda_final: f64,
}

impl DecomposedLayer {
    pub fn with_layer_id(mut self, layer_id: LayerId) -> Self {
        self.layer_id = layer_id;
        self
    }

    pub fn d_in(&self) -> usize {
        self.w_frozen.cols()
    }

    pub fn d_out(&self) -> usize {
        self.w_frozen.rows()
    }

    /// `b·a`
    pub fn adapter_product(&self) -> Matrix {
        self.b.matmul(&self.a).expect("adapter factors have matching rank")
    }

    pub fn merge(&self) -> Matrix {
        self.w_frozen
            .add(&self.adapter_product())
            .expect("adapter product matches frozen shape")
    }

    /// `b·(a·x)`
    pub fn adapter_output(&self, x: &[f64]) -> Result<Vec<f64>> {
        let h = self.a.matvec(x)?;
        self.b.matvec(&h)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_masked(x, |_| {})
    }

    /// Forward pass where `mask` may alter the adapter output before it is
    /// added to the frozen path.
    pub fn forward_masked(&self, x: &[f64], mut mask: impl FnMut(&mut [f64])) -> Result<Vec<f64>> {
        let mut y = self.w_frozen.matvec(x)?;
        let mut adapter = self.adapter_output(x)?;
        mask(&mut adapter);
        y.iter_mut().zip(&adapter).for_each(|(a, b)| *a += b);
        Ok(y)
    }

    pub fn trainable_params(&self) -> usize {
        self.b.rows() * self.b.cols() + self.a.rows() * self.a.cols()
    }

    /// Writes `w_frozen.mat`, `b.mat`, `a.mat` and `layer.json` into `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        save_matrix(dir.join("w_frozen.mat"), &self.w_frozen)?;
        save_matrix(dir.join("b.mat"), &self.b)?;
        save_matrix(dir.join("a.mat"), &self.a)?;
        let sidecar = LayerSidecar {
            layer_id: self.layer_id,
            rank_r: self.rank_r,
            singular_values: self.singular_values.clone(),
            lambda_final: self.lambda_final,
        };
        fs::write(dir.join("layer.json"), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let sidecar: LayerSidecar = serde_json::from_slice(&fs::read(dir.join("layer.json"))?)?;
        let layer = Self {
            layer_id: sidecar.layer_id,
            w_frozen: load_matrix(dir.join("w_frozen.mat"))?,
            b: load_matrix(dir.join("b.mat"))?,
            a: load_matrix(dir.join("a.mat"))?,
            singular_values: sidecar.singular_values,
            rank_r: sidecar.rank_r,
            lambda_final: sidecar.lambda_final,
        };
        let (d_out, d_in) = layer.w_frozen.shape();
        if layer.b.shape() != (d_out, layer.rank_r) || layer.a.shape() != (layer.rank_r, d_in) {
            return Err(Error::Format(format!(
                "adapter shapes {:?}/{:?} do not match {d_out}x{d_in} at rank {}",
                layer.b.shape(),
                layer.a.shape(),
                layer.rank_r
            )));
        }
        Ok(layer)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerSidecar {
    layer_id: LayerId,
    rank_r: usize,
    singular_values: Vec<f64>,
    #[serde(default)]
    lambda_final: f64,
}

/// Splits `w` using the input covariance `sigma_in`.
pub fn decompose(w: &Matrix, sigma_in: &Matrix, cfg: &KpdConfig) -> Result<DecomposedLayer> {
    cfg.validate()?;
    let (d_out, d_in) = w.shape();
    if sigma_in.shape() != (d_in, d_in) {
        return Err(Error::Shape(format!(
            "covariance is {}x{}, layer input width is {d_in}",
            sigma_in.rows(),
            sigma_in.cols()
        )));
    }
    let full_rank = d_out.min(d_in);
    if cfg.rank_r >= full_rank {
        return Err(Error::RankTooLarge {
            rank: cfg.rank_r,
            max: full_rank,
        });
    }
    let reg = regularized_inverse(sigma_in, cfg.lambda0, cfg.inverse_threshold, cfg.max_doublings)?;
    let weighted = w.matmul(&reg.sigma_tilde)?;
    let factors = svd(&weighted)?;

    let r = cfg.rank_r;
    let start = full_rank - r;
    let root_s: Vec<f64> = factors.s[start..].iter().map(|s| s.max(0.0).sqrt()).collect();

    // B = U[:, R-r:] · diag(√s)
    let mut b = factors.u.columns_range(start, r);
    for i in 0..d_out {
        for (j, rs) in root_s.iter().enumerate() {
            b[(i, j)] *= rs;
        }
    }
    // A = diag(√s) · (Vᵀ Σ̃⁻¹)[R-r:, :]
    let mut a = factors.vt.rows_range(start, r).matmul(&reg.inverse)?;
    for (j, rs) in root_s.iter().enumerate() {
        a.row_mut(j).iter_mut().for_each(|v| *v *= rs);
    }
    if cfg.scaling == FactorScaling::Balanced {
        for j in 0..r {
            let nb = b.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            let na = norm2(a.row(j));
            if nb > 0.0 && na > 0.0 {
                let f = (na / nb).sqrt();
                for i in 0..d_out {
                    b[(i, j)] *= f;
                }
                a.row_mut(j).iter_mut().for_each(|v| *v /= f);
            }
        }
    }

    let w_frozen = w.sub(&b.matmul(&a)?)?;
    Ok(DecomposedLayer {
        layer_id: 0,
        w_frozen,
        b,
        a,
        singular_values: factors.s,
        rank_r: r,
        lambda_final: reg.lambda_final,
    })
}

/// Plain SVD split of `w` (identity covariance).
pub fn decompose_plain(w: &Matrix, cfg: &KpdConfig) -> Result<DecomposedLayer> {
    decompose(w, &Matrix::identity(w.cols()), cfg)
}

/// LoRA-style adapter: `B = 0`, `A` Gaussian with standard deviation
/// `1/√d_in`, `W_frozen = W`. The spectrum is that of `W` itself.
pub fn lora_random(w: &Matrix, rank_r: usize, seed: u64) -> Result<DecomposedLayer> {
    let (d_out, d_in) = w.shape();
    let full_rank = d_out.min(d_in);
    if rank_r == 0 {
        return Err(Error::InvalidRank { rank: 0, len: full_rank });
    }
    if rank_r >= full_rank {
        return Err(Error::RankTooLarge { rank: rank_r, max: full_rank });
    }
    let mut g = rng::stream(seed, rng::STREAM_LORA);
    let a = Matrix::new(
        rank_r,
        d_in,
        rng::normal_vec(&mut g, rank_r * d_in, 1.0 / (d_in as f64).sqrt()),
    )?;
    Ok(DecomposedLayer {
        layer_id: 0,
        w_frozen: w.clone(),
        b: Matrix::zeros(d_out, rank_r),
        a,
        singular_values: svd(w)?.s,
        rank_r,
        lambda_final: 0.0,
    })
}

pub fn forward_decomposed(layer: &DecomposedLayer, x: &[f64]) -> Result<Vec<f64>> {
    layer.forward(x)
}

pub fn merge(layer: &DecomposedLayer) -> Matrix {
    layer.merge()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag321() -> DecomposedLayer {
        decompose(
            &Matrix::from_diag(&[3.0, 2.0, 1.0]),
            &Matrix::identity(3),
            &KpdConfig::with_rank(1),
        )
        .unwrap()
    }

    #[test]
    fn diagonal_rank_one_split() {
        let l = diag321();
        assert_eq!(l.singular_values, vec![3.0, 2.0, 1.0]);
        assert_eq!(l.adapter_product(), Matrix::from_diag(&[0.0, 0.0, 1.0]));
        assert_eq!(l.w_frozen, Matrix::from_diag(&[3.0, 2.0, 0.0]));
        assert_eq!(l.b.as_slice(), &[0.0, 0.0, 1.0]);
        assert_eq!(l.a.as_slice(), &[0.0, 0.0, 1.0]);
        assert_eq!(l.lambda_final, 0.0);
    }

    #[test]
    fn diagonal_rank_two_split() {
        let l = decompose(
            &Matrix::from_diag(&[3.0, 2.0, 1.0]),
            &Matrix::identity(3),
            &KpdConfig::with_rank(2),
        )
        .unwrap();
        let close = |a: &Matrix, b: &Matrix| a.sub(b).unwrap().max_abs() < 1e-12;
        assert!(close(&l.w_frozen, &Matrix::from_diag(&[3.0, 0.0, 0.0])));
        assert!(close(&l.adapter_product(), &Matrix::from_diag(&[0.0, 2.0, 1.0])));
    }

    #[test]
    fn rank_limits() {
        let w = Matrix::from_diag(&[3.0, 2.0, 1.0]);
        let i = Matrix::identity(3);
        assert!(matches!(
            decompose(&w, &i, &KpdConfig::with_rank(3)),
            Err(Error::RankTooLarge { rank: 3, max: 3 })
        ));
        assert!(matches!(
            decompose(&w, &i, &KpdConfig::with_rank(0)),
            Err(Error::InvalidRank { .. })
        ));
        assert!(matches!(
            decompose(&w, &Matrix::identity(2), &KpdConfig::with_rank(1)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn forward_and_merge_of_diagonal_case() {
        let l = diag321();
        assert_eq!(forward_decomposed(&l, &[1.0, 1.0, 1.0]).unwrap(), vec![3.0, 2.0, 1.0]);
        assert_eq!(forward_decomposed(&l, &[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(matches!(forward_decomposed(&l, &[1.0]), Err(Error::Shape(_))));
        assert_eq!(merge(&l), Matrix::from_diag(&[3.0, 2.0, 1.0]));
        let mut zeroed = l.clone();
        zeroed.b = Matrix::zeros(3, 1);
        assert_eq!(merge(&zeroed), l.w_frozen);
    }

    #[test]
    fn lora_has_zero_product() {
        let w = Matrix::from_rows(&[[1.0, 2.0, 0.0], [0.0, 1.0, -1.0], [2.0, 0.0, 1.0]]).unwrap();
        let l = lora_random(&w, 2, 7).unwrap();
        assert_eq!(l.adapter_product(), Matrix::zeros(3, 3));
        assert_eq!(l.merge(), w);
        assert!(l.a.max_abs() > 0.0);
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let l = diag321().with_layer_id(5);
        l.save_dir(dir.path()).unwrap();
        assert_eq!(DecomposedLayer::load_dir(dir.path()).unwrap(), l);
    }
}
