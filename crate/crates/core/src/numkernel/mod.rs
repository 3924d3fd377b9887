//! Dense `f64` linear algebra: matrix type, SVD, symmetric eigenvalues and
//! regularized covariance inversion.

mod inverse;
pub mod io;
mod matrix;
mod svd;

pub use inverse::{
    gauss_jordan_inverse, inverse_residual, regularized_inverse, RegularizedInverse,
    DEFAULT_INVERSE_THRESHOLD, DEFAULT_LAMBDA0, DEFAULT_MAX_DOUBLINGS,
};
pub use matrix::{add_scaled_identity, dot, frobenius_norm, matmul, norm2, transpose, Matrix};
pub use svd::{spectral_norm, svd, symmetric_eigenvalues, SvdResult, SIGN_EPS};
