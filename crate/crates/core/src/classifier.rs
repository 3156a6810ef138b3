//! Test-time coding and the fused residual/SVM decision rule.
//!
//! A sample is coded in one multiply, `z = P x` with
//! `P = (D^T D + eta1 I)^{-1} D^T`. Each class gets a regularized residual
//! `r_c = ||x - D_c z_c|| / ||z_c||` over its own atoms and an SVM score
//! `s_c = u_c^T z + b_c`; the prediction is `argmin_c (r_c - eta2 s_c)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{try_factor, SpdFactor};
use crate::model::Dictionary;
use crate::svm::svm_scores;
use crate::trainer::TrainedModel;

/// Coefficient mass below which a class residual is `+inf`.
pub const MIN_CLASS_MASS: f64 = 1e-12;

/// `K x m` coding operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub matrix: DMatrix<f64>,
}

impl Projector {
    pub fn code(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.matrix.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "sample has length {} but the projector expects {}",
                x.len(),
                self.matrix.ncols()
            )));
        }
        Ok(&self.matrix * x)
    }
}

pub fn build_projector(dict: &Dictionary, eta1: f64) -> Result<Projector> {
    if !(eta1.is_finite() && eta1 >= 0.0) {
        return Err(Error::InvalidParam(format!("eta1 must be nonnegative, got {eta1}")));
    }
    let atoms = dict.atoms();
    let k = atoms.ncols();
    let mut gram = atoms.tr_mul(atoms);
    for i in 0..k {
        gram[(i, i)] += eta1;
    }
    let rhs = atoms.transpose();
    let matrix = if eta1 > 0.0 {
        SpdFactor::new(&gram)?.solve_matrix(&rhs)
    } else {
        // No silent ridge here: an unregularized projector must be exact.
        if k > atoms.nrows() {
            return Err(Error::SingularSystem);
        }
        try_factor(gram).ok_or(Error::SingularSystem)?.solve(&rhs)
    };
    Ok(Projector { matrix })
}

/// Index of the smallest entry; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `r_c` for every class; classes with no coefficient mass get `+inf`.
pub fn regularized_residuals(x: &DVector<f64>, z: &DVector<f64>, dict: &Dictionary) -> Result<DVector<f64>> {
    if x.len() != dict.dim() || z.len() != dict.num_atoms() {
        return Err(Error::DimensionMismatch(format!(
            "sample length {} / code length {} vs dictionary {}x{}",
            x.len(),
            z.len(),
            dict.dim(),
            dict.num_atoms()
        )));
    }
    let atoms = dict.atoms();
    Ok(DVector::from_iterator(
        dict.num_classes(),
        (1..=dict.num_classes()).map(|c| {
            let range = dict.class_atoms(c);
            let zc = z.rows(range.start, range.len());
            let mass = zc.norm();
            if mass < MIN_CLASS_MASS {
                return f64::INFINITY;
            }
            let recon = atoms.columns(range.start, range.len()) * zc;
            (x - recon).norm() / mass
        }),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// 1-based class.
    pub predicted_class: usize,
    pub residuals: DVector<f64>,
    pub svm_scores: DVector<f64>,
    /// `residuals - eta2 * svm_scores`
    pub fused: DVector<f64>,
}

impl Decision {
    pub fn from_parts(residuals: DVector<f64>, svm_scores: DVector<f64>, eta2: f64) -> Self {
        let fused = DVector::from_iterator(
            residuals.len(),
            residuals.iter().zip(svm_scores.iter()).map(|(&r, &s)| r - eta2 * s),
        );
        let predicted_class = argmin(fused.as_slice()) + 1;
        Self {
            predicted_class,
            residuals,
            svm_scores,
            fused,
        }
    }

    pub fn winning_score(&self) -> f64 {
        self.fused[self.predicted_class - 1]
    }
}

/// Classifies a sample that already lives in the dictionary's feature space.
pub fn classify(x: &DVector<f64>, model: &TrainedModel) -> Result<Decision> {
    classify_with_eta2(x, model, model.params.eta2)
}

pub fn classify_with_eta2(x: &DVector<f64>, model: &TrainedModel, eta2: f64) -> Result<Decision> {
    let z = model.projector.code(x)?;
    let r = regularized_residuals(x, &z, &model.dictionary)?;
    let s = svm_scores(&z, &model.svm)?;
    Ok(Decision::from_parts(r, s, eta2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub decisions: Vec<Decision>,
    /// Present when labels were supplied.
    pub accuracy: Option<f64>,
    /// `confusion[true - 1][predicted - 1]`, present when labels were supplied.
    pub confusion: Option<Vec<Vec<usize>>>,
}

impl BatchReport {
    pub fn predictions(&self) -> Vec<usize> {
        self.decisions.iter().map(|d| d.predicted_class).collect()
    }
}

pub fn classify_batch(x: &DMatrix<f64>, labels: Option<&[usize]>, model: &TrainedModel) -> Result<BatchReport> {
    classify_batch_with_eta2(x, labels, model, model.params.eta2)
}

pub fn classify_batch_with_eta2(
    x: &DMatrix<f64>,
    labels: Option<&[usize]>,
    model: &TrainedModel,
    eta2: f64,
) -> Result<BatchReport> {
    let n = x.ncols();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if x.nrows() != model.dictionary.dim() {
        return Err(Error::DimensionMismatch(format!(
            "samples have dimension {} but the dictionary has {}",
            x.nrows(),
            model.dictionary.dim()
        )));
    }
    let num_classes = model.num_classes();
    if let Some(l) = labels {
        if l.len() != n {
            return Err(Error::LengthMismatch {
                labels: l.len(),
                samples: n,
            });
        }
        if let Some(&bad) = l.iter().find(|&&c| c == 0 || c > num_classes) {
            return Err(Error::ClassOutOfRange {
                class: bad,
                num_classes,
            });
        }
    }
    let decisions = (0..n)
        .into_par_iter()
        .map(|i| classify_with_eta2(&x.column(i).into_owned(), model, eta2))
        .collect::<Result<Vec<_>>>()?;

    let (accuracy, confusion) = match labels {
        Some(l) => {
            let mut confusion = vec![vec![0usize; num_classes]; num_classes];
            for (d, &truth) in decisions.iter().zip(l) {
                confusion[truth - 1][d.predicted_class - 1] += 1;
            }
            let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
            (Some(correct as f64 / n as f64), Some(confusion))
        }
        None => (None, None),
    };
    Ok(BatchReport {
        decisions,
        accuracy,
        confusion,
    })
}

/// Confusion matrix as CSV: a `true\pred,<labels...>` header, then one row
/// per true class led by its label.
pub fn confusion_csv(confusion: &[Vec<usize>], label_names: &[String]) -> String {
    let mut out = String::from("true\\pred");
    for name in label_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (name, row) in label_names.iter().zip(confusion) {
        out.push_str(name);
        for count in row {
            out.push_str(&format!(",{count}"));
        }
        out.push('\n');
    }
    out
}
