//! Domain types shared across the crate.
//!
//! Samples are stored as columns throughout: a feature matrix is `m x n`
//! (feature dimension by sample count), a dictionary is `m x K` and a coding
//! matrix is `K x n`. Class labels are dense 1-based integers `1..=C`.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance on atom norms accepted by [`Dictionary::new`].
pub const UNIT_NORM_TOL: f64 = 1e-10;

fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for col in 0..m.ncols() {
        for row in 0..m.nrows() {
            if !m[(row, col)].is_finite() {
                return Some((row, col));
            }
        }
    }
    None
}

/// Dense `m x n` matrix of finite features, one sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(DMatrix<f64>);

impl FeatureMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::EmptyInput);
        }
        if let Some((row, col)) = first_non_finite(&values) {
            return Err(Error::NonFiniteEntry { row, col });
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_samples(&self) -> usize {
        self.0.ncols()
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl Deref for FeatureMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Features plus 1-based class labels.
///
/// Construction does not validate; call [`validate_dataset`] (the trainer
/// does this on entry).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(features: FeatureMatrix, labels: Vec<usize>, num_classes: usize) -> Self {
        Self {
            features,
            labels,
            num_classes,
        }
    }

    /// Column indices of the samples belonging to class `c`.
    pub fn class_indices(&self, c: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == c)
            .map(|(i, _)| i)
            .collect()
    }

    /// Sub-dataset made of the given columns, in the given order.
    pub fn select(&self, columns: &[usize]) -> Result<Self> {
        let features = FeatureMatrix::new(self.features.select_columns(columns))?;
        let labels = columns.iter().map(|&i| self.labels[i]).collect();
        Ok(Self::new(features, labels, self.num_classes))
    }
}

pub fn validate_dataset(ds: &LabeledDataset) -> Result<()> {
    let n = ds.features.ncols();
    if ds.labels.len() != n {
        return Err(Error::LengthMismatch {
            labels: ds.labels.len(),
            samples: n,
        });
    }
    if let Some((row, col)) = first_non_finite(&ds.features) {
        return Err(Error::NonFiniteEntry { row, col });
    }
    if ds.num_classes == 0 {
        return Err(Error::EmptyInput);
    }
    let mut counts = vec![0usize; ds.num_classes];
    for &l in &ds.labels {
        if l == 0 || l > ds.num_classes {
            return Err(Error::ClassOutOfRange {
                class: l,
                num_classes: ds.num_classes,
            });
        }
        counts[l - 1] += 1;
    }
    if let Some(c) = counts.iter().position(|&k| k == 0) {
        return Err(Error::EmptyClass(c + 1));
    }
    Ok(())
}

/// `+1` where `labels[i] == c`, `-1` elsewhere.
pub fn one_vs_all_targets(labels: &[usize], c: usize, num_classes: usize) -> Result<DVector<f64>> {
    if c == 0 || c > num_classes {
        return Err(Error::ClassOutOfRange { class: c, num_classes });
    }
    Ok(DVector::from_iterator(
        labels.len(),
        labels.iter().map(|&l| if l == c { 1.0 } else { -1.0 }),
    ))
}

/// Unit-norm atoms grouped by class.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
    atom_labels: Vec<usize>,
    num_classes: usize,
}

impl Dictionary {
    pub fn new(atoms: DMatrix<f64>, atom_labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if atoms.ncols() != atom_labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} atoms but {} atom labels",
                atoms.ncols(),
                atom_labels.len()
            )));
        }
        if atoms.ncols() == 0 || atoms.nrows() == 0 {
            return Err(Error::EmptyInput);
        }
        if let Some((row, col)) = first_non_finite(&atoms) {
            return Err(Error::NonFiniteEntry { row, col });
        }
        for (k, col) in atoms.column_iter().enumerate() {
            let norm = col.norm();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidParam(format!("atom {k} has norm {norm}, expected 1")));
            }
        }
        if atom_labels.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidParam("atom labels must be non-decreasing".into()));
        }
        let mut owned = vec![false; num_classes];
        for &l in &atom_labels {
            if l == 0 || l > num_classes {
                return Err(Error::ClassOutOfRange { class: l, num_classes });
            }
            owned[l - 1] = true;
        }
        if let Some(c) = owned.iter().position(|&o| !o) {
            return Err(Error::EmptyClass(c + 1));
        }
        Ok(Self {
            atoms,
            atom_labels,
            num_classes,
        })
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn atom_labels(&self) -> &[usize] {
        &self.atom_labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    /// Atom indices owned by class `c`.
    pub fn class_atoms(&self, c: usize) -> std::ops::Range<usize> {
        let start = self.atom_labels.partition_point(|&l| l < c);
        let end = self.atom_labels.partition_point(|&l| l <= c);
        start..end
    }
}

/// `K x n` coefficients; column `i` codes sample `i`, row `j` is the profile
/// of atom `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodingMatrix(DMatrix<f64>);

impl CodingMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if let Some((row, col)) = first_non_finite(&values) {
            return Err(Error::NonFiniteEntry { row, col });
        }
        Ok(Self(values))
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl Deref for CodingMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Training and decision hyperparameters.
///
/// Defaults suit small, well-separated feature sets with `theta = 0.2`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Weight of the atom-locality term.
    pub lambda1: f64,
    /// Weight of the SVM term.
    pub lambda2: f64,
    /// Squared-hinge penalty.
    pub theta: f64,
    /// Ridge of the test-time projector.
    pub eta1: f64,
    /// Weight of the SVM score in the fused decision.
    pub eta2: f64,
    pub atoms_per_class: usize,
    pub knn_k: usize,
    /// Heat-kernel bandwidth; `None` uses the mean pairwise atom distance.
    pub delta: Option<f64>,
    pub max_iters: usize,
    /// Ridge for the dictionary update; `None` uses `1e-10 * tr(ZZ^T) / K`.
    pub ridge_eps: Option<f64>,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lambda1: 1e-3,
            lambda2: 1e-6,
            theta: 0.2,
            eta1: 1e-2,
            eta2: 5.0,
            atoms_per_class: 10,
            knn_k: 5,
            delta: None,
            max_iters: 15,
            ridge_eps: None,
            seed: 0,
        }
    }
}

impl HyperParams {
    /// Checks every field; `num_atoms` is the dictionary size `K` the
    /// parameters will be used with.
    pub fn validate(&self, num_atoms: usize) -> Result<()> {
        let weights = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("theta", self.theta),
            ("eta1", self.eta1),
            ("eta2", self.eta2),
        ];
        for (name, v) in weights {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParam(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if self.atoms_per_class == 0 {
            return Err(Error::InvalidParam("atoms_per_class must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParam("max_iters must be positive".into()));
        }
        if self.knn_k == 0 {
            return Err(Error::InvalidParam("knn_k must be positive".into()));
        }
        if self.knn_k + 1 > num_atoms {
            return Err(Error::KTooLarge {
                knn_k: self.knn_k,
                max: num_atoms.saturating_sub(1),
            });
        }
        if let Some(d) = self.delta {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::NonPositiveDelta(d));
            }
        }
        if let Some(r) = self.ridge_eps {
            if !r.is_finite() || r < 0.0 {
                return Err(Error::InvalidParam(format!(
                    "ridge_eps must be finite and nonnegative, got {r}"
                )));
            }
        }
        Ok(())
    }
}

/// Mapping between external string labels and dense classes `1..=C`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    /// Builds a map from the distinct labels; numeric labels sort numerically,
    /// anything else sorts lexicographically.
    pub fn fit<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut names: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        names.sort();
        names.dedup();
        if names.iter().all(|s| s.parse::<i64>().is_ok()) {
            names.sort_by_key(|s| s.parse::<i64>().unwrap());
        }
        Self { names }
    }

    pub fn from_names(names: Vec<String>) -> Self {
        Self { names }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn encode_one(&self, label: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == label)
            .map(|i| i + 1)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn encode<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        labels.iter().map(|l| self.encode_one(l.as_ref())).collect()
    }

    /// External name of class `c` (1-based).
    pub fn decode(&self, c: usize) -> &str {
        &self.names[c - 1]
    }
}
