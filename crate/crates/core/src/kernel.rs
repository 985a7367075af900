//! Dense matrix primitives: Moore–Penrose pseudoinverse, positive
//! semidefiniteness and column-space inclusion.
//!
//! Every comparison is relative, scaled by `1 + ‖·‖_max`, so that the zero
//! matrix is handled without special cases.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{LqError, Result};

/// Symmetry tolerance applied to weights at the problem boundary.
pub const SYM_TOL: f64 = 1e-9;
/// Singular values below `RANK_TOL * σ_max` are treated as zero.
pub const RANK_TOL: f64 = 1e-11;
/// Default tolerance for [`is_psd`].
pub const PSD_TOL: f64 = 1e-9;
/// Default tolerance for [`range_included`].
pub const RANGE_TOL: f64 = 1e-9;

/// Largest absolute entry, zero for an empty matrix.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// `‖X − Xᵀ‖_max`; the caller guarantees `X` is square.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && asymmetry(m) <= tol * (1.0 + max_abs(m))
}

/// Moore–Penrose pseudoinverse via the singular value decomposition.
///
/// Singular values at or below `RANK_TOL * σ_max` are dropped, so the zero
/// matrix maps to the zero matrix of transposed shape.
pub fn pinv(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    pinv_with_rank(m).map(|(p, _)| p)
}

/// Pseudoinverse together with the numerical rank that was used.
pub fn pinv_with_rank(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    if !all_finite(m) {
        return Err(LqError::NonFinite {
            what: "pinv input".into(),
            index: 0,
        });
    }
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok((DMatrix::zeros(cols, rows), 0));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = RANK_TOL * sigma_max;

    let mut out = DMatrix::zeros(cols, rows);
    let mut rank = 0;
    for (k, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma <= cutoff || sigma == 0.0 {
            continue;
        }
        rank += 1;
        let inv = 1.0 / sigma;
        // out += v_k * (1/σ_k) * u_kᵀ
        for i in 0..cols {
            let vi = v_t[(k, i)] * inv;
            if vi == 0.0 {
                continue;
            }
            for j in 0..rows {
                out[(i, j)] += vi * u[(j, k)];
            }
        }
    }
    Ok((out, rank))
}

/// Outcome of a positive-semidefiniteness test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsdVerdict {
    pub is_psd: bool,
    pub min_eigenvalue: f64,
    pub tolerance_used: f64,
}

impl PsdVerdict {
    /// PSD only thanks to the tolerance band.
    pub fn is_borderline(&self) -> bool {
        self.is_psd && self.min_eigenvalue < 0.0
    }
}

/// Smallest eigenvalue of a symmetric matrix (symmetrized first).
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut eig: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().cloned().collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Eigenvalue-based PSD test: `is_psd ⟺ λ_min ≥ −tol·(1+‖M‖_max)`.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> Result<PsdVerdict> {
    if !m.is_square() {
        return Err(LqError::mismatch("is_psd input", 0, "square", format!("{:?}", m.shape())));
    }
    if !all_finite(m) {
        return Err(LqError::NonFinite {
            what: "is_psd input".into(),
            index: 0,
        });
    }
    let dev = asymmetry(m);
    if dev > SYM_TOL * (1.0 + max_abs(m)) {
        return Err(LqError::Asymmetric {
            what: "is_psd input".into(),
            index: 0,
            deviation: dev,
        });
    }
    let tolerance_used = tol * (1.0 + max_abs(m));
    let min_eigenvalue = min_eigenvalue(m);
    Ok(PsdVerdict {
        is_psd: min_eigenvalue >= -tolerance_used,
        min_eigenvalue,
        tolerance_used,
    })
}

/// Column-space inclusion `Range(X) ⊆ Range(Y)` via the orthogonal
/// projector `Y Y†`.
pub fn range_included(x: &DMatrix<f64>, y: &DMatrix<f64>, tol: f64) -> Result<bool> {
    if x.nrows() != y.nrows() {
        return Err(LqError::mismatch(
            "range_included rows",
            0,
            y.nrows(),
            x.nrows(),
        ));
    }
    let projector = y * pinv(y)?;
    let residual = &projector * x - x;
    Ok(max_abs(&residual) <= tol * (1.0 + max_abs(x)))
}

/// Inverse of a square matrix when it is numerically nonsingular, otherwise
/// its pseudoinverse. The flag reports whether the fallback was taken.
pub fn inverse_or_pinv(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let (p, rank) = pinv_with_rank(m)?;
    Ok((p, rank < m.nrows().min(m.ncols())))
}
