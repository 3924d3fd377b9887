use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::svd::spectral_norm;
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA0: f64 = 1e-6;
pub const DEFAULT_INVERSE_THRESHOLD: f64 = 1e-3;
pub const DEFAULT_MAX_DOUBLINGS: usize = 40;

const SYMMETRY_TOL: f64 = 1e-10;

/// A covariance matrix made invertible by a diagonal shift, with its inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizedInverse {
    pub sigma_tilde: Matrix,
    pub inverse: Matrix,
    /// 0 when the plain inverse already passed, else `lambda0 · 2^doublings`.
    pub lambda_final: f64,
    pub doublings: usize,
    /// `‖Σ̃ Σ̃⁻¹ − I‖₂` of the accepted pair.
    pub residual: f64,
}

impl RegularizedInverse {
    pub fn was_regularized(&self) -> bool {
        self.lambda_final > 0.0
    }
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
///
/// Returns `None` when a pivot is exactly zero or the result is not finite.
pub fn gauss_jordan_inverse(m: &Matrix) -> Option<Matrix> {
    let n = m.rows();
    if !m.is_square() {
        return None;
    }
    let mut a = m.clone();
    let mut inv = Matrix::identity(n);
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_abs = a[(col, col)].abs();
        for r in col + 1..n {
            let v = a[(r, col)].abs();
            if v > pivot_abs {
                pivot_abs = v;
                pivot_row = r;
            }
        }
        if pivot_abs == 0.0 {
            return None;
        }
        if pivot_row != col {
            for j in 0..n {
                let (x, y) = (a[(col, j)], a[(pivot_row, j)]);
                a[(col, j)] = y;
                a[(pivot_row, j)] = x;
                let (x, y) = (inv[(col, j)], inv[(pivot_row, j)]);
                inv[(col, j)] = y;
                inv[(pivot_row, j)] = x;
            }
        }
        let p = a[(col, col)];
        for j in 0..n {
            a[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[(r, col)];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                a[(r, j)] -= f * a[(col, j)];
                inv[(r, j)] -= f * inv[(col, j)];
            }
        }
    }
    inv.is_finite().then_some(inv)
}

/// `‖m · inv − I‖₂`.
pub fn inverse_residual(m: &Matrix, inv: &Matrix) -> f64 {
    let prod = m.matmul(inv).expect("square matrices of equal size");
    let resid = prod
        .sub(&Matrix::identity(m.rows()))
        .expect("square matrices of equal size");
    if !resid.is_finite() {
        return f64::INFINITY;
    }
    spectral_norm(&resid)
}

/// Inverts `sigma`, shifting its diagonal by `λ · mean(diag Σ)` when needed.
///
/// The plain inverse (λ = 0) is tried first. On failure λ starts at `lambda0`
/// and doubles until `‖Σ̃ Σ̃⁻¹ − I‖₂ ≤ threshold`, giving up after
/// `max_doublings` doublings.
pub fn regularized_inverse(
    sigma: &Matrix,
    lambda0: f64,
    threshold: f64,
    max_doublings: usize,
) -> Result<RegularizedInverse> {
    if !sigma.is_square() {
        return Err(Error::Shape(format!(
            "covariance must be square, got {}x{}",
            sigma.rows(),
            sigma.cols()
        )));
    }
    let n = sigma.rows();
    if n == 0 {
        return Err(Error::Shape("covariance is empty".into()));
    }
    let asym = sigma.asymmetry().unwrap_or(0.0);
    if asym > SYMMETRY_TOL * sigma.max_abs().max(1.0) {
        return Err(Error::Shape(format!(
            "covariance is not symmetric (max asymmetry {asym:e})"
        )));
    }
    if !(lambda0 > 0.0 && threshold > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "lambda0 ({lambda0}) and threshold ({threshold}) must be positive"
        )));
    }
    let mean_diag = sigma.trace() / n as f64;
    if !(mean_diag > 0.0) {
        return Err(Error::DegenerateCovariance(format!(
            "mean diagonal of {n}x{n} covariance is {mean_diag}"
        )));
    }

    let attempt = |sigma_tilde: Matrix| -> (Option<(Matrix, Matrix)>, f64) {
        match gauss_jordan_inverse(&sigma_tilde) {
            Some(inv) => {
                let r = inverse_residual(&sigma_tilde, &inv);
                if r <= threshold {
                    (Some((sigma_tilde, inv)), r)
                } else {
                    (None, r)
                }
            }
            None => (None, f64::INFINITY),
        }
    };

    let (accepted, mut residual) = attempt(sigma.clone());
    if let Some((sigma_tilde, inverse)) = accepted {
        return Ok(RegularizedInverse {
            sigma_tilde,
            inverse,
            lambda_final: 0.0,
            doublings: 0,
            residual,
        });
    }

    let mut lambda = lambda0;
    for doublings in 0..=max_doublings {
        let sigma_tilde = sigma.add_scaled_identity(lambda * mean_diag)?;
        let (accepted, r) = attempt(sigma_tilde);
        residual = r;
        if let Some((sigma_tilde, inverse)) = accepted {
            log::debug!("covariance regularized: lambda={lambda:e} after {doublings} doublings");
            return Ok(RegularizedInverse {
                sigma_tilde,
                inverse,
                lambda_final: lambda,
                doublings,
                residual,
            });
        }
        lambda *= 2.0;
    }
    Err(Error::RegularizationFailure {
        doublings: max_doublings,
        residual,
    })
}
