//! Per-sample coding with the locality term and the squared-hinge SVM term.
//!
//! For a sample `x` the first sweep solves
//! `(D^T D + lambda1 L) z = D^T x`. Later sweeps add the margin violators
//! `phi` of the previous iterate:
//!
//! ```text
//! D1 = D^T D + lambda1 L + 2 lambda2 theta sum_{c in phi} u_c u_c^T
//! D2 = D^T x + 2 lambda2 theta sum_{c in phi} u_c (y^c - b_c)
//! ```
//!
//! A class is a violator when `y^c (u_c^T z + b_c) < 1`, the usual
//! squared-hinge activation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::model::{CodingMatrix, Dictionary, HyperParams};
use crate::svm::SvmModel;

/// Margin-violating classes (1-based, ascending).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActiveSet(Vec<usize>);

impl ActiveSet {
    pub fn new(mut classes: Vec<usize>) -> Self {
        classes.sort_unstable();
        classes.dedup();
        Self(classes)
    }

    pub fn all(num_classes: usize) -> Self {
        Self((1..=num_classes).collect())
    }

    pub fn classes(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `max(0, 1 - y (u^T z + b))^2`.
pub fn quad_hinge(z: &DVector<f64>, y: f64, u: &DVector<f64>, b: f64) -> Result<f64> {
    if z.len() != u.len() {
        return Err(Error::DimensionMismatch(format!(
            "coding vector length {} vs normal length {}",
            z.len(),
            u.len()
        )));
    }
    let slack = (1.0 - y * (u.dot(z) + b)).max(0.0);
    Ok(slack * slack)
}

/// `+1`/`-1` target of one sample against every class.
pub fn sample_targets(label: usize, num_classes: usize) -> Vec<f64> {
    (1..=num_classes).map(|c| if c == label { 1.0 } else { -1.0 }).collect()
}

pub fn active_classes(z: &DVector<f64>, targets: &[f64], svm: &SvmModel) -> Result<ActiveSet> {
    if targets.len() != svm.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} classes",
            targets.len(),
            svm.num_classes()
        )));
    }
    if z.len() != svm.num_atoms() {
        return Err(Error::DimensionMismatch(format!(
            "coding vector length {} vs {} SVM inputs",
            z.len(),
            svm.num_atoms()
        )));
    }
    let margins = svm.normals.tr_mul(z) + &svm.biases;
    Ok(ActiveSet(
        (0..targets.len())
            .filter(|&c| targets[c] * margins[c] < 1.0)
            .map(|c| c + 1)
            .collect(),
    ))
}

/// The shared part of every coding system: `D^T D + lambda1 L`.
struct CodingSystem<'a> {
    atoms: &'a DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl<'a> CodingSystem<'a> {
    fn new(atoms: &'a DMatrix<f64>, laplacian: &DMatrix<f64>, lambda1: f64) -> Result<Self> {
        let k = atoms.ncols();
        if laplacian.shape() != (k, k) {
            return Err(Error::DimensionMismatch(format!(
                "Laplacian is {}x{} for {} atoms",
                laplacian.nrows(),
                laplacian.ncols(),
                k
            )));
        }
        let mut gram = atoms.tr_mul(atoms);
        if lambda1 != 0.0 {
            gram += laplacian * lambda1;
        }
        Ok(Self { atoms, gram })
    }

    fn check_sample(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.atoms.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "sample has length {} but atoms have {} rows",
                x.len(),
                self.atoms.nrows()
            )));
        }
        Ok(())
    }

    /// `(D1, D2)`; with an empty `phi` or `lambda2 = 0` this is the plain system.
    fn with_svm(
        &self,
        x: &DVector<f64>,
        svm: &SvmModel,
        targets: &[f64],
        phi: &ActiveSet,
        weight: f64,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let mut lhs = self.gram.clone();
        let mut rhs = self.atoms.tr_mul(x);
        if weight != 0.0 {
            for &c in phi.classes() {
                let u = svm.normals.column(c - 1);
                lhs.ger(weight, &u, &u, 1.0);
                rhs.axpy(weight * (targets[c - 1] - svm.biases[c - 1]), &u, 1.0);
            }
        }
        (lhs, rhs)
    }
}

fn svm_weight(params: &HyperParams) -> f64 {
    2.0 * params.lambda2 * params.theta
}

/// Normal equations `(D^T D + lambda1 L, D^T x)` of the first-sweep problem.
pub fn initial_normal_equations(
    atoms: &DMatrix<f64>,
    laplacian: &DMatrix<f64>,
    x: &DVector<f64>,
    lambda1: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let sys = CodingSystem::new(atoms, laplacian, lambda1)?;
    sys.check_sample(x)?;
    let rhs = atoms.tr_mul(x);
    Ok((sys.gram, rhs))
}

/// Normal equations `(D1, D2)` of the SVM-guided problem with `phi` frozen.
pub fn svm_normal_equations(
    atoms: &DMatrix<f64>,
    laplacian: &DMatrix<f64>,
    x: &DVector<f64>,
    params: &HyperParams,
    svm: &SvmModel,
    targets: &[f64],
    phi: &ActiveSet,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let sys = CodingSystem::new(atoms, laplacian, params.lambda1)?;
    sys.check_sample(x)?;
    check_svm(atoms, svm, targets, phi)?;
    Ok(sys.with_svm(x, svm, targets, phi, svm_weight(params)))
}

fn check_svm(atoms: &DMatrix<f64>, svm: &SvmModel, targets: &[f64], phi: &ActiveSet) -> Result<()> {
    if svm.num_atoms() != atoms.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "SVM expects {} atoms, dictionary has {}",
            svm.num_atoms(),
            atoms.ncols()
        )));
    }
    if targets.len() != svm.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} classes",
            targets.len(),
            svm.num_classes()
        )));
    }
    if let Some(&c) = phi.classes().iter().find(|&&c| c == 0 || c > svm.num_classes()) {
        return Err(Error::ClassOutOfRange {
            class: c,
            num_classes: svm.num_classes(),
        });
    }
    Ok(())
}

/// `z = (D^T D + lambda1 L)^{-1} D^T x`.
pub fn code_initial(
    dict: &Dictionary,
    laplacian: &DMatrix<f64>,
    x: &DVector<f64>,
    lambda1: f64,
) -> Result<DVector<f64>> {
    let (lhs, rhs) = initial_normal_equations(dict.atoms(), laplacian, x, lambda1)?;
    Ok(SpdFactor::new(&lhs)?.solve(&rhs))
}

/// `z = D1^{-1} D2` with the violator set `phi` held fixed.
pub fn code_with_svm(
    dict: &Dictionary,
    laplacian: &DMatrix<f64>,
    x: &DVector<f64>,
    params: &HyperParams,
    svm: &SvmModel,
    targets: &[f64],
    phi: &ActiveSet,
) -> Result<DVector<f64>> {
    let (lhs, rhs) = svm_normal_equations(dict.atoms(), laplacian, x, params, svm, targets, phi)?;
    Ok(SpdFactor::new(&lhs)?.solve(&rhs))
}

/// Output of a full coding sweep.
#[derive(Debug, Clone)]
pub struct CodingSweep {
    pub codes: CodingMatrix,
    /// `|phi|` used for each column (all zero on the first sweep).
    pub active_sizes: Vec<usize>,
}

/// Codes every column of `x`.
///
/// With `iteration == 1` the hinge term is off and every column uses the
/// first-sweep system. Otherwise each column's `phi` is evaluated at the
/// matching column of `z_prev`.
#[allow(clippy::too_many_arguments)]
pub fn code_all(
    dict: &Dictionary,
    laplacian: &DMatrix<f64>,
    x: &DMatrix<f64>,
    labels: &[usize],
    params: &HyperParams,
    svm: &SvmModel,
    iteration: usize,
    z_prev: &DMatrix<f64>,
) -> Result<CodingSweep> {
    let atoms = dict.atoms();
    let (m, n) = x.shape();
    let k = atoms.ncols();
    if m != atoms.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "samples have {m} rows, atoms have {}",
            atoms.nrows()
        )));
    }
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            labels: labels.len(),
            samples: n,
        });
    }
    let sys = CodingSystem::new(atoms, laplacian, params.lambda1)?;
    let first = iteration <= 1;
    if !first {
        if z_prev.shape() != (k, n) {
            return Err(Error::DimensionMismatch(format!(
                "previous codes are {}x{}, expected {k}x{n}",
                z_prev.nrows(),
                z_prev.ncols()
            )));
        }
        check_svm(atoms, svm, &vec![0.0; svm.num_classes()], &ActiveSet::default())?;
    }
    // Columns with an empty phi share this factorization.
    let plain = SpdFactor::new(&sys.gram);
    let weight = svm_weight(params);
    let num_classes = svm.num_classes();

    let columns = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(DVector<f64>, usize)> {
            let xi = x.column(i).into_owned();
            if first {
                let f = plain.as_ref().map_err(|_| Error::SingularSystem)?;
                return Ok((f.solve(&atoms.tr_mul(&xi)), 0));
            }
            let targets = sample_targets(labels[i], num_classes);
            let phi = active_classes(&z_prev.column(i).into_owned(), &targets, svm)?;
            if phi.is_empty() || weight == 0.0 {
                let f = plain.as_ref().map_err(|_| Error::SingularSystem)?;
                return Ok((f.solve(&atoms.tr_mul(&xi)), phi.len()));
            }
            let (lhs, rhs) = sys.with_svm(&xi, svm, &targets, &phi, weight);
            Ok((SpdFactor::new(&lhs)?.solve(&rhs), phi.len()))
        })
        .enumerate()
        .map(|(i, r)| r.map_err(|e| e.in_column(i)))
        .collect::<Result<Vec<_>>>()?;

    let mut z = DMatrix::zeros(k, n);
    let mut active_sizes = Vec::with_capacity(n);
    for (i, (col, size)) in columns.into_iter().enumerate() {
        z.set_column(i, &col);
        active_sizes.push(size);
    }
    Ok(CodingSweep {
        codes: CodingMatrix::new(z)?,
        active_sizes,
    })
}

/// `||A z - b|| / (1 + ||b||)`.
pub fn relative_residual(lhs: &DMatrix<f64>, z: &DVector<f64>, rhs: &DVector<f64>) -> f64 {
    (lhs * z - rhs).norm() / (1.0 + rhs.norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_dict(k: usize) -> Dictionary {
        Dictionary::new(DMatrix::identity(k, k), (1..=k).collect(), k).unwrap()
    }

    #[test]
    fn hinge_values() {
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let at = |f: f64| quad_hinge(&DVector::from_vec(vec![f, 7.0]), 1.0, &u, 0.0).unwrap();
        assert_eq!(at(1.0), 0.0);
        assert_eq!(at(0.0), 1.0);
        assert_eq!(at(-1.0), 4.0);
        assert_eq!(at(3.0), 0.0);
        assert_eq!(
            quad_hinge(&DVector::from_vec(vec![0.5, 0.0]), -1.0, &u, 0.5).unwrap(),
            4.0
        );
        assert!(quad_hinge(&DVector::zeros(3), 1.0, &u, 0.0).is_err());
    }

    #[test]
    fn active_set_examples() {
        let z = DVector::from_vec(vec![1.0, 2.0]);
        let zero = SvmModel::zeros(2, 3);
        let phi = active_classes(&z, &[1.0, -1.0, -1.0], &zero).unwrap();
        assert_eq!(phi, ActiveSet::all(3));

        // margins 0.5 (class 1) and 1.5 (class 2)
        let svm = SvmModel::new(
            DMatrix::from_column_slice(2, 2, &[0.5, 0.0, 0.0, -0.75]),
            DVector::zeros(2),
        )
        .unwrap();
        let phi = active_classes(&z, &[1.0, -1.0], &svm).unwrap();
        assert_eq!(phi.classes(), &[1]);

        let wide = SvmModel::new(
            DMatrix::from_column_slice(2, 2, &[2.0, 0.0, 0.0, -2.0]),
            DVector::zeros(2),
        )
        .unwrap();
        assert!(active_classes(&z, &[1.0, -1.0], &wide).unwrap().is_empty());
        assert!(active_classes(&z, &[1.0], &wide).is_err());
    }

    #[test]
    fn identity_dictionary_codes() {
        let d = identity_dict(3);
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let z = code_initial(&d, &DMatrix::zeros(3, 3), &x, 0.0).unwrap();
        assert_eq!(z, x);
        let z = code_initial(&d, &DMatrix::identity(3, 3), &x, 1.0).unwrap();
        assert!((z - &x / 2.0).norm() < 1e-15);
    }

    #[test]
    fn svm_term_vanishes() {
        let d = identity_dict(3);
        let l = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        let x = DVector::from_vec(vec![0.3, -0.2, 0.9]);
        let svm = SvmModel::new(DMatrix::from_element(3, 3, 0.4), DVector::from_element(3, 0.1)).unwrap();
        let targets = sample_targets(2, 3);
        let params = HyperParams {
            lambda1: 0.1,
            lambda2: 0.0,
            ..Default::default()
        };
        let base = code_initial(&d, &l, &x, 0.1).unwrap();
        let z = code_with_svm(&d, &l, &x, &params, &svm, &targets, &ActiveSet::all(3)).unwrap();
        assert_eq!(z, base);
        let params = HyperParams {
            lambda1: 0.1,
            lambda2: 0.5,
            ..Default::default()
        };
        let z = code_with_svm(&d, &l, &x, &params, &svm, &targets, &ActiveSet::default()).unwrap();
        assert_eq!(z, base);
        let z = code_with_svm(&d, &l, &x, &params, &svm, &targets, &ActiveSet::all(3)).unwrap();
        assert_ne!(z, base);
    }

    #[test]
    fn first_sweep_matches_code_initial() {
        let atoms = DMatrix::from_fn(4, 3, |i, j| ((i + 2 * j) as f64).sin());
        let norms: Vec<f64> = atoms.column_iter().map(|c| c.norm()).collect();
        let atoms = DMatrix::from_fn(4, 3, |i, j| atoms[(i, j)] / norms[j]);
        let d = Dictionary::new(atoms, vec![1, 1, 2], 2).unwrap();
        let l = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let x = DMatrix::from_fn(4, 5, |i, j| ((i * 5 + j) as f64 * 0.7).cos());
        let params = HyperParams::default();
        let sweep = code_all(
            &d,
            &l,
            &x,
            &[1, 2, 1, 2, 2],
            &params,
            &SvmModel::zeros(3, 2),
            1,
            &DMatrix::zeros(0, 0),
        )
        .unwrap();
        for i in 0..5 {
            let zi = code_initial(&d, &l, &x.column(i).into_owned(), params.lambda1).unwrap();
            assert_eq!(sweep.codes.column(i), zi);
        }
        assert!(sweep.active_sizes.iter().all(|&s| s == 0));
    }

    #[test]
    fn zero_svm_activates_every_class() {
        let d = identity_dict(2);
        let l = DMatrix::zeros(2, 2);
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let params = HyperParams {
            lambda2: 0.5,
            ..Default::default()
        };
        let svm = SvmModel::zeros(2, 2);
        let sweep = code_all(&d, &l, &x, &[1, 2], &params, &svm, 2, &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(sweep.active_sizes, vec![2, 2]);
        let z0 = code_with_svm(
            &d,
            &l,
            &x.column(0).into_owned(),
            &params,
            &svm,
            &sample_targets(1, 2),
            &ActiveSet::all(2),
        )
        .unwrap();
        assert_eq!(sweep.codes.column(0), z0);
    }

    #[test]
    fn column_errors_carry_index() {
        let d = identity_dict(2);
        let err = code_all(
            &d,
            &DMatrix::zeros(3, 3),
            &DMatrix::zeros(2, 1),
            &[1],
            &HyperParams::default(),
            &SvmModel::zeros(2, 2),
            1,
            &DMatrix::zeros(0, 0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }
}
