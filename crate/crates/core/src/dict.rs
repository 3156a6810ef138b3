//! Least-squares dictionary update and unit-norm restoration.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::try_factor;
use crate::model::CodingMatrix;

/// Atoms whose norm falls below this are reported as degenerate.
pub const MIN_ATOM_NORM: f64 = 1e-12;

/// Default ridge `1e-10 * tr(ZZ^T) / K`.
pub fn default_ridge(z: &DMatrix<f64>) -> f64 {
    let k = z.nrows().max(1);
    1e-10 * z.norm_squared() / k as f64
}

/// `D = X Z^T (Z Z^T + ridge I)^{-1}`.
pub fn update_dictionary(x: &DMatrix<f64>, z: &DMatrix<f64>, ridge_eps: f64) -> Result<DMatrix<f64>> {
    if x.ncols() != z.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} samples, Z has {}",
            x.ncols(),
            z.ncols()
        )));
    }
    if !(ridge_eps.is_finite() && ridge_eps >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "ridge_eps must be nonnegative, got {ridge_eps}"
        )));
    }
    let k = z.nrows();
    let mut gram = z * z.transpose();
    for i in 0..k {
        gram[(i, i)] += ridge_eps;
    }
    // Solve (ZZ^T + eps I) D^T = Z X^T.
    let rhs = z * x.transpose();
    let chol = try_factor(gram).ok_or(Error::SingularGram)?;
    Ok(chol.solve(&rhs).transpose())
}

/// Divides each atom by its norm and scales the matching profile by the same
/// factor, so `D Z` is unchanged.
pub fn normalize_atoms(d: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<(DMatrix<f64>, CodingMatrix)> {
    if d.ncols() != z.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} atoms but {} profiles",
            d.ncols(),
            z.nrows()
        )));
    }
    let mut atoms = d.clone();
    let mut codes = z.clone();
    for k in 0..d.ncols() {
        let norm = d.column(k).norm();
        if norm.is_nan() || norm < MIN_ATOM_NORM {
            return Err(Error::DegenerateAtom(k));
        }
        if norm != 1.0 {
            atoms.column_mut(k).unscale_mut(norm);
            codes.row_mut(k).scale_mut(norm);
        }
    }
    Ok((atoms, CodingMatrix::new(codes)?))
}
