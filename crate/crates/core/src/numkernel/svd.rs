//! One-sided Jacobi SVD and a cyclic Jacobi symmetric eigensolver.
//!
//! Both run a fixed pivot order so results are bit-reproducible for identical
//! input. The SVD additionally fixes the sign of each singular pair.

use serde::{Deserialize, Serialize};

use super::matrix::{dot, norm2, Matrix};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// Magnitude below which a vector component is ignored when fixing signs.
pub const SIGN_EPS: f64 = 1e-12;

/// Thin SVD `m = u · diag(s) · vt` with `R = min(rows, cols)` components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdResult {
    /// `rows × R`, orthonormal columns.
    pub u: Matrix,
    /// Descending, non-negative, length `R`.
    pub s: Vec<f64>,
    /// `R × cols`, orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    pub fn rank_capacity(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.s.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul(&self.vt).expect("svd factors have compatible shapes")
    }
}

pub fn svd(m: &Matrix) -> Result<SvdResult> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::Shape(format!("svd of empty {rows}x{cols} matrix")));
    }
    if !m.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "svd input {rows}x{cols} has non-finite entries"
        )));
    }
    let (mut u, s, mut vt) = if rows >= cols {
        let (u, s, v) = jacobi_tall(m)?;
        (u, s, v.transpose())
    } else {
        // mᵀ = U' S V'ᵀ  =>  m = V' S U'ᵀ
        let (u_t, s, v_t) = jacobi_tall(&m.transpose())?;
        (v_t, s, u_t.transpose())
    };
    for j in 0..s.len() {
        let first = (0..u.rows()).map(|i| u[(i, j)]).find(|x| x.abs() > SIGN_EPS);
        if first.is_some_and(|x| x < 0.0) {
            for i in 0..u.rows() {
                u[(i, j)] = -u[(i, j)];
            }
            vt.row_mut(j).iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok(SvdResult { u, s, vt })
}

/// Hestenes one-sided Jacobi on a matrix with `rows >= cols`.
///
/// Returns `(U: rows×n, s: n, V: n×n)` sorted by descending `s`.
fn jacobi_tall(m: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (rows, n) = m.shape();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| m.column(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = f64::EPSILON * rows as f64;

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let (c, s) = rotation(alpha, beta, gamma);
                let (left, right) = cols.split_at_mut(q);
                rotate_pair(&mut left[p], &mut right[0], c, s);
                let (left, right) = vcols.split_at_mut(q);
                rotate_pair(&mut left[p], &mut right[0], c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NumericalFailure(format!(
            "one-sided Jacobi SVD of {rows}x{n} matrix did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let norms: Vec<f64> = cols.iter().map(|c| norm2(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    let s_max = norms[order[0]];
    let null_cut = s_max * f64::EPSILON * rows as f64;
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut pending_null = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        s.push(norms[j]);
        v_cols.push(vcols[j].clone());
        if norms[j] > 0.0 && norms[j] > null_cut {
            u_cols.push(cols[j].iter().map(|x| x / norms[j]).collect());
        } else {
            u_cols.push(Vec::new());
            pending_null.push(slot);
        }
    }
    // Left vectors of (numerically) null components carry no signal; fill them
    // with an orthonormal completion so U keeps orthonormal columns.
    for slot in pending_null {
        let basis: Vec<&Vec<f64>> = u_cols.iter().filter(|c| !c.is_empty()).collect();
        u_cols[slot] = complete_basis(rows, &basis);
    }

    let u = Matrix::from_columns(&u_cols)?;
    let v = Matrix::from_columns(&v_cols)?;
    Ok((u, s, v))
}

#[inline]
fn rotation(alpha: f64, beta: f64, gamma: f64) -> (f64, f64) {
    let zeta = (beta - alpha) / (2.0 * gamma);
    let t = if zeta.abs() > 1e150 {
        0.5 / zeta
    } else {
        zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    (c, c * t)
}

#[inline]
fn rotate_pair(p: &mut [f64], q: &mut [f64], c: f64, s: f64) {
    for (a, b) in p.iter_mut().zip(q.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Unit vector orthogonal to every vector in `basis` (which must be
/// orthonormal and have fewer than `dim` members).
fn complete_basis(dim: usize, basis: &[&Vec<f64>]) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for k in 0..dim {
        let mut e = vec![0.0; dim];
        e[k] = 1.0;
        // two Gram-Schmidt passes
        for _ in 0..2 {
            for b in basis {
                let proj = dot(&e, b);
                e.iter_mut().zip(b.iter()).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let n = norm2(&e);
        if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
            best = Some((n, e));
        }
    }
    let (n, e) = best.expect("dim >= 1");
    e.into_iter().map(|x| x / n).collect()
}

/// Eigenvalues of a symmetric matrix by cyclic two-sided Jacobi, descending.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    let n = m.rows();
    if !m.is_square() {
        return Err(Error::Shape(format!(
            "eigenvalues need a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let mut a = m.clone();
    let scale = a.frobenius_norm();
    if scale == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= f64::EPSILON * scale * n as f64 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    if !converged {
        // Rotations stall at round-off; accept if the remainder is tiny.
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() > 1e-12 * scale {
            return Err(Error::NumericalFailure(format!(
                "Jacobi eigensolver on {n}x{n} matrix did not converge"
            )));
        }
    }
    let mut ev = a.diag();
    ev.sort_by(|x, y| y.total_cmp(x));
    Ok(ev)
}

/// Largest singular value, via the eigenvalues of the smaller Gram matrix.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.rows() == 0 || m.cols() == 0 {
        return 0.0;
    }
    let gram = if m.rows() <= m.cols() {
        m.matmul(&m.transpose())
    } else {
        m.transpose().matmul(m)
    }
    .expect("gram product shapes agree");
    match symmetric_eigenvalues(&gram) {
        Ok(ev) => ev[0].max(0.0).sqrt(),
        Err(_) => svd(m).map(|r| r.s[0]).unwrap_or(f64::INFINITY),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        let d = a.sub(b).unwrap().max_abs();
        assert!(d <= tol, "max diff {d:e} > {tol:e}");
    }

    #[test]
    fn diagonal_matrix_is_its_own_svd() {
        let m = Matrix::from_diag(&[3.0, 2.0, 1.0]);
        let r = svd(&m).unwrap();
        assert_eq!(r.s, vec![3.0, 2.0, 1.0]);
        assert_eq!(r.u, Matrix::identity(3));
        assert_eq!(r.vt, Matrix::identity(3));
    }

    #[test]
    fn unsorted_diagonal_is_sorted() {
        let m = Matrix::from_diag(&[1.0, -3.0, 2.0]);
        let r = svd(&m).unwrap();
        assert_eq!(r.s, vec![3.0, 2.0, 1.0]);
        assert_close(&r.reconstruct(), &m, 1e-15);
    }

    #[test]
    fn zero_matrix_has_zero_spectrum() {
        let r = svd(&Matrix::zeros(2, 2)).unwrap();
        assert_eq!(r.s, vec![0.0, 0.0]);
        assert_close(&r.u.transpose().matmul(&r.u).unwrap(), &Matrix::identity(2), 1e-15);
    }

    #[test]
    fn wide_and_tall_shapes() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 0.0, -1.0], [0.5, -1.0, 3.0, 2.0]]).unwrap();
        for mm in [m.clone(), m.transpose()] {
            let r = svd(&mm).unwrap();
            assert_eq!(r.s.len(), 2);
            assert_eq!(r.u.rows(), mm.rows());
            assert_eq!(r.vt.cols(), mm.cols());
            assert_close(&r.reconstruct(), &mm, 1e-13);
        }
    }

    #[test]
    fn rank_one_gets_orthonormal_completion() {
        let m = Matrix::from_rows(&[[1.0; 3]; 3]).unwrap();
        let r = svd(&m).unwrap();
        assert!((r.s[0] - 3.0).abs() < 1e-14);
        assert!(r.s[1] < 1e-14 && r.s[2] < 1e-14);
        assert_close(&r.u.transpose().matmul(&r.u).unwrap(), &Matrix::identity(3), 1e-12);
        assert_close(&r.reconstruct(), &m, 1e-13);
    }

    #[test]
    fn sign_convention_first_component_non_negative() {
        let m = Matrix::from_rows(&[[-2.0, 0.0], [0.0, -1.0]]).unwrap();
        let r = svd(&m).unwrap();
        for j in 0..2 {
            let col = r.u.column(j);
            let first = col.iter().find(|x| x.abs() > SIGN_EPS).unwrap();
            assert!(*first > 0.0);
        }
        assert_close(&r.reconstruct(), &m, 0.0);
    }

    #[test]
    fn rejects_empty() {
        assert!(matches!(svd(&Matrix::zeros(0, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn spectral_norm_simple_cases() {
        assert!((spectral_norm(&Matrix::from_diag(&[3.0, 2.0])) - 3.0).abs() < 1e-15);
        assert!((spectral_norm(&Matrix::identity(3)) - 1.0).abs() < 1e-15);
        assert_eq!(spectral_norm(&Matrix::zeros(2, 3)), 0.0);
    }

    #[test]
    fn eigenvalues_of_known_symmetric() {
        let m = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let ev = symmetric_eigenvalues(&m).unwrap();
        assert!((ev[0] - 3.0).abs() < 1e-14 && (ev[1] - 1.0).abs() < 1e-14);
    }
}
