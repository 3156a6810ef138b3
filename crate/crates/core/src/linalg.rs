//! Symmetric positive-definite solves with a single ridge retry.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative ridge added on the retry, scaled by `trace(A) / K`.
pub const RETRY_RIDGE: f64 = 1e-10;

/// Pivots below this fraction of the largest diagonal entry are treated as a
/// failed factorization.
const PIVOT_FLOOR: f64 = 1e-14;

/// Plain Cholesky that also rejects numerically zero pivots.
pub fn try_factor(a: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let scale = a.diagonal().iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let chol = a.cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows())
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if min_pivot.is_nan() || min_pivot <= PIVOT_FLOOR * scale {
        return None;
    }
    Some(chol)
}

/// Cholesky factor of a symmetric PSD matrix, retried once with a small
/// diagonal ridge when the plain factorization fails.
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || n != a.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "expected a nonempty square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if let Some(chol) = try_factor(a.clone()) {
            return Ok(Self { chol });
        }
        let ridge = RETRY_RIDGE * a.trace().abs() / n as f64;
        if ridge > 0.0 {
            let mut shifted = a.clone();
            for i in 0..n {
                shifted[(i, i)] += ridge;
            }
            if let Some(chol) = try_factor(shifted) {
                log::debug!("SPD solve fell back to ridge {ridge:e}");
                return Ok(Self { chol });
            }
        }
        Err(Error::SingularSystem)
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }
}
