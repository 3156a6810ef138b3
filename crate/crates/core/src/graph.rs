//! kNN heat-kernel graph over dictionary atoms and its Laplacian.
//!
//! Atom `j` is linked to atom `i` when it is among the `k` nearest atoms of
//! `i` (Euclidean, self excluded, ties to the lower index), with weight
//! `exp(-||d_i - d_j|| / delta)`. The relation is not symmetric, so the
//! returned similarity is `(M + M^T) / 2`. The locality energy
//! `tr(Z^T L Z)` then equals `1/2 sum_ij M_ij ||z^i - z^j||^2` over atom
//! profiles (rows of `Z`).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry check in [`laplacian`].
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianBundle {
    /// Symmetric similarity `M` with zero diagonal.
    pub similarity: DMatrix<f64>,
    /// Diagonal of the degree matrix `T`.
    pub degree: DVector<f64>,
    /// `L = T - M`.
    pub laplacian: DMatrix<f64>,
}

impl LaplacianBundle {
    pub fn num_atoms(&self) -> usize {
        self.laplacian.nrows()
    }

    pub fn degree_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.degree)
    }
}

fn pairwise_distances(atoms: &DMatrix<f64>) -> DMatrix<f64> {
    let k = atoms.ncols();
    let rows: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|i| (0..k).map(|j| (atoms.column(i) - atoms.column(j)).norm()).collect())
        .collect();
    DMatrix::from_fn(k, k, |i, j| rows[i][j])
}

/// Mean distance over all unordered atom pairs; the default bandwidth.
pub fn mean_pairwise_distance(atoms: &DMatrix<f64>) -> f64 {
    let k = atoms.ncols();
    if k < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            sum += (atoms.column(i) - atoms.column(j)).norm();
        }
    }
    sum / (k * (k - 1) / 2) as f64
}

/// Row-wise kNN heat-kernel weights before symmetrization.
pub fn raw_knn_similarity(atoms: &DMatrix<f64>, knn_k: usize, delta: f64) -> Result<DMatrix<f64>> {
    let k = atoms.ncols();
    if knn_k + 1 > k {
        return Err(Error::KTooLarge {
            knn_k,
            max: k.saturating_sub(1),
        });
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::NonPositiveDelta(delta));
    }
    let dist = pairwise_distances(atoms);
    let mut raw = DMatrix::zeros(k, k);
    for i in 0..k {
        let mut order: Vec<usize> = (0..k).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| dist[(i, a)].total_cmp(&dist[(i, b)]).then(a.cmp(&b)));
        for &j in order.iter().take(knn_k) {
            raw[(i, j)] = (-dist[(i, j)] / delta).exp();
        }
    }
    Ok(raw)
}

/// Symmetrized kNN heat-kernel similarity between the columns of `atoms`.
pub fn knn_similarity(atoms: &DMatrix<f64>, knn_k: usize, delta: f64) -> Result<DMatrix<f64>> {
    let raw = raw_knn_similarity(atoms, knn_k, delta)?;
    let k = raw.nrows();
    Ok(DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            0.0
        } else {
            0.5 * (raw[(i, j)] + raw[(j, i)])
        }
    }))
}

pub fn laplacian(similarity: &DMatrix<f64>) -> Result<LaplacianBundle> {
    let k = similarity.nrows();
    if k != similarity.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "similarity must be square, got {}x{}",
            k,
            similarity.ncols()
        )));
    }
    for i in 0..k {
        for j in 0..k {
            let (a, b) = (similarity[(i, j)], similarity[(j, i)]);
            if !a.is_finite() {
                return Err(Error::NonFiniteEntry { row: i, col: j });
            }
            if a < 0.0 {
                return Err(Error::NegativeSimilarity { row: i, col: j });
            }
            if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::AsymmetricInput);
            }
        }
    }
    // Self-loops cancel in T - M, so the diagonal is dropped outright.
    let m = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            0.0
        } else {
            0.5 * (similarity[(i, j)] + similarity[(j, i)])
        }
    });
    let degree = DVector::from_fn(k, |i, _| m.row(i).sum());
    let laplacian = DMatrix::from_fn(k, k, |i, j| if i == j { degree[i] } else { -m[(i, j)] });
    Ok(LaplacianBundle {
        similarity: m,
        degree,
        laplacian,
    })
}

/// Builds the bundle straight from the atoms.
pub fn atom_graph(atoms: &DMatrix<f64>, knn_k: usize, delta: f64) -> Result<LaplacianBundle> {
    laplacian(&knn_similarity(atoms, knn_k, delta)?)
}

/// `tr(Z^T L Z)`.
pub fn locality_energy(z: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<f64> {
    if l.nrows() != l.ncols() || l.nrows() != z.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "Laplacian is {}x{} but coding matrix has {} rows",
            l.nrows(),
            l.ncols(),
            z.nrows()
        )));
    }
    Ok((l * z).component_mul(z).sum())
}
