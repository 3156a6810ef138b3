//! The alternating training loop.
//!
//! Every sweep rebuilds the atom graph from the current dictionary, recodes
//! all samples, refits the dictionary by least squares (then restores unit
//! atoms), and refits the one-vs-all SVM on the new codes. Training stops
//! after `max_iters` sweeps or once the relative objective change drops
//! below [`CONVERGENCE_TOL`].

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{build_projector, Projector};
use crate::coder::{code_all, quad_hinge};
use crate::dict::{default_ridge, normalize_atoms, update_dictionary};
use crate::error::{Error, Result};
use crate::graph::{atom_graph, locality_energy, mean_pairwise_distance, LaplacianBundle};
use crate::ingest::{pca_apply, PcaTransform};
use crate::model::{validate_dataset, CodingMatrix, Dictionary, HyperParams, LabelMap, LabeledDataset};
use crate::svm::{fit_multiclass, SvmFit, SvmModel};

/// Relative objective change below which training stops.
pub const CONVERGENCE_TOL: f64 = 1e-5;

/// Everything needed for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub dictionary: Dictionary,
    pub svm: SvmModel,
    pub params: HyperParams,
    pub projector: Projector,
    pub label_map: LabelMap,
    /// Reduction applied to raw features before coding, if any.
    pub pca: Option<PcaTransform>,
}

impl TrainedModel {
    /// Dimension of the raw features the model accepts.
    pub fn input_dim(&self) -> usize {
        match &self.pca {
            Some(p) => p.input_dim(),
            None => self.dictionary.dim(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.dictionary.num_classes()
    }

    pub fn with_label_map(mut self, label_map: LabelMap) -> Self {
        self.label_map = label_map;
        self
    }

    pub fn with_pca(mut self, pca: Option<PcaTransform>) -> Self {
        self.pca = pca;
        self
    }

    /// Maps raw features into the dictionary's space (applies PCA if present).
    pub fn prepare(&self, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if raw.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "features have dimension {} but the model expects {}",
                raw.nrows(),
                self.input_dim()
            )));
        }
        match &self.pca {
            Some(p) => pca_apply(p, raw),
            None => Ok(raw.clone()),
        }
    }
}

/// Per-iteration record of a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub objective_per_iter: Vec<f64>,
    /// Total `|phi|` over all samples in each coding sweep.
    pub active_set_sizes: Vec<usize>,
    /// `(iteration, atom index)` for every atom that had to be reinitialized.
    pub atom_reinit_events: Vec<(usize, usize)>,
    pub num_samples: usize,
}

impl TrainTrace {
    pub fn iterations(&self) -> usize {
        self.objective_per_iter.len()
    }

    pub fn mean_active_size(&self, iter: usize) -> f64 {
        self.active_set_sizes[iter] as f64 / self.num_samples.max(1) as f64
    }

    /// `iteration,objective,mean_active_set_size` rows; `preamble` lines are
    /// written first as `#` comments.
    pub fn to_csv(&self, preamble: &[String]) -> String {
        let mut out = String::new();
        for line in preamble {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out.push_str("iteration,objective,mean_active_set_size\n");
        for (i, obj) in self.objective_per_iter.iter().enumerate() {
            out.push_str(&format!("{},{:e},{}\n", i + 1, obj, self.mean_active_size(i)));
        }
        out
    }
}

/// The three terms of the training objective and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    /// `||X - DZ||_F^2`
    pub reconstruction: f64,
    /// `tr(Z^T L Z)`, unweighted.
    pub locality: f64,
    /// `sum_c ||u_c||^2 + theta sum_i hinge`, unweighted.
    pub discrimination: f64,
    pub total: f64,
}

/// Full objective for the given state.
pub fn objective(
    x: &DMatrix<f64>,
    atoms: &DMatrix<f64>,
    z: &DMatrix<f64>,
    laplacian: &DMatrix<f64>,
    svm: &SvmModel,
    labels: &[usize],
    params: &HyperParams,
) -> Result<ObjectiveTerms> {
    if atoms.ncols() != z.nrows() || x.ncols() != z.ncols() || x.nrows() != atoms.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "X {}x{}, D {}x{}, Z {}x{}",
            x.nrows(),
            x.ncols(),
            atoms.nrows(),
            atoms.ncols(),
            z.nrows(),
            z.ncols()
        )));
    }
    if svm.num_atoms() != z.nrows() || labels.len() != x.ncols() {
        return Err(Error::DimensionMismatch("SVM or labels do not match the codes".into()));
    }
    let reconstruction = (x - atoms * z).norm_squared();
    let locality = locality_energy(z, laplacian)?;
    let mut discrimination = 0.0;
    for c in 0..svm.num_classes() {
        let u = svm.normals.column(c).into_owned();
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let y = if label == c + 1 { 1.0 } else { -1.0 };
            loss += quad_hinge(&z.column(i).into_owned(), y, &u, svm.biases[c])?;
        }
        discrimination += u.norm_squared() + params.theta * loss;
    }
    Ok(ObjectiveTerms {
        reconstruction,
        locality,
        discrimination,
        total: reconstruction + params.lambda1 * locality + 2.0 * params.lambda2 * discrimination,
    })
}

/// Starting point of the alternating loop.
#[derive(Debug, Clone)]
pub struct Initialization {
    pub dictionary: Dictionary,
    pub codes: CodingMatrix,
    pub svm: SvmModel,
}

/// Seeds atoms with normalized training samples of each class, codes the
/// data by plain least squares and zeroes the SVM.
pub fn initialize(ds: &LabeledDataset, params: &HyperParams) -> Result<Initialization> {
    validate_dataset(ds)?;
    let num_classes = ds.num_classes;
    let per_class = params.atoms_per_class;
    if per_class == 0 {
        return Err(Error::InvalidParam("atoms_per_class must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let m = ds.features.dim();
    let k = per_class * num_classes;
    let mut atoms = DMatrix::zeros(m, k);
    let mut atom_labels = Vec::with_capacity(k);
    for c in 1..=num_classes {
        let members = ds.class_indices(c);
        let picks: Vec<usize> = if members.len() >= per_class {
            index::sample(&mut rng, members.len(), per_class).into_vec()
        } else {
            (0..per_class).map(|_| rng.random_range(0..members.len())).collect()
        };
        for p in picks {
            let slot = atom_labels.len();
            let sample = ds.features.column(members[p]);
            let norm = sample.norm();
            if norm.is_nan() || norm <= 0.0 {
                return Err(Error::DegenerateAtom(slot));
            }
            atoms.set_column(slot, &(sample / norm));
            atom_labels.push(c);
        }
    }
    let dictionary = Dictionary::new(atoms, atom_labels, num_classes)?;
    let svm = SvmModel::zeros(k, num_classes);
    let plain = HyperParams {
        lambda1: 0.0,
        ..params.clone()
    };
    let sweep = code_all(
        &dictionary,
        &DMatrix::zeros(k, k),
        &ds.features,
        &ds.labels,
        &plain,
        &svm,
        1,
        &DMatrix::zeros(0, 0),
    )?;
    Ok(Initialization {
        dictionary,
        codes: sweep.codes,
        svm,
    })
}

fn build_graph(atoms: &DMatrix<f64>, params: &HyperParams) -> Result<LaplacianBundle> {
    let delta = match params.delta {
        Some(d) => d,
        None => {
            let mean = mean_pairwise_distance(atoms);
            // All atoms identical: any bandwidth gives unit weights.
            if mean > 0.0 {
                mean
            } else {
                1.0
            }
        }
    };
    atom_graph(atoms, params.knn_k, delta)
}

/// Intermediate state of one sweep, handed to a [`SweepObserver`].
pub struct SweepSnapshot<'a> {
    pub iteration: usize,
    /// Graph built from the dictionary entering this sweep.
    pub graph: &'a LaplacianBundle,
    pub dictionary_before: &'a Dictionary,
    pub codes_before: &'a DMatrix<f64>,
    pub svm_before: &'a SvmModel,
    /// Codes produced by the coding step.
    pub codes: &'a DMatrix<f64>,
    pub active_sizes: &'a [usize],
    /// Least-squares atoms before renormalization.
    pub raw_atoms: &'a DMatrix<f64>,
    pub ridge: f64,
    pub dictionary: &'a Dictionary,
    /// Codes after the compensating rescale.
    pub normalized_codes: &'a DMatrix<f64>,
    pub svm_fit: &'a SvmFit,
    pub objective: ObjectiveTerms,
}

pub trait SweepObserver {
    fn on_sweep(&mut self, snapshot: &SweepSnapshot<'_>);
}

impl SweepObserver for () {
    fn on_sweep(&mut self, _: &SweepSnapshot<'_>) {}
}

/// Replaces atom `k` by the worst-reconstructed sample of its class.
fn reinit_atom(
    raw: &mut DMatrix<f64>,
    z: &mut DMatrix<f64>,
    ds: &LabeledDataset,
    atom_class: usize,
    k: usize,
    taken: &mut Vec<usize>,
) -> Result<()> {
    let residuals = &*ds.features - &*raw * &*z;
    let mut best: Option<(usize, f64)> = None;
    for i in ds.class_indices(atom_class) {
        if taken.contains(&i) || ds.features.column(i).norm() == 0.0 {
            continue;
        }
        let r = residuals.column(i).norm();
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((i, r));
        }
    }
    let (i, _) = best.ok_or(Error::DegenerateAtom(k))?;
    taken.push(i);
    raw.set_column(k, &ds.features.column(i));
    // A zeroed profile keeps DZ exactly as it was.
    z.row_mut(k).fill(0.0);
    Ok(())
}

pub fn train(ds: &LabeledDataset, params: &HyperParams) -> Result<(TrainedModel, TrainTrace)> {
    train_observed(ds, params, &mut ())
}

pub fn train_observed(
    ds: &LabeledDataset,
    params: &HyperParams,
    observer: &mut dyn SweepObserver,
) -> Result<(TrainedModel, TrainTrace)> {
    validate_dataset(ds)?;
    let num_classes = ds.num_classes;
    params.validate(params.atoms_per_class * num_classes)?;
    let x: &DMatrix<f64> = &ds.features;

    let init = initialize(ds, params)?;
    let mut dictionary = init.dictionary;
    let mut codes = init.codes.into_inner();
    let mut svm = init.svm;
    let mut graph = build_graph(dictionary.atoms(), params)?;
    let mut trace = TrainTrace {
        num_samples: ds.features.num_samples(),
        ..Default::default()
    };

    for t in 1..=params.max_iters {
        let sweep = code_all(&dictionary, &graph.laplacian, x, &ds.labels, params, &svm, t, &codes)?;
        let coded = sweep.codes.into_inner();

        let ridge = params.ridge_eps.unwrap_or_else(|| default_ridge(&coded));
        let mut raw = update_dictionary(x, &coded, ridge)?;
        let mut work = coded.clone();
        let mut taken = Vec::new();
        let (atoms, normalized) = loop {
            match normalize_atoms(&raw, &work) {
                Ok(done) => break done,
                Err(Error::DegenerateAtom(k)) if taken.len() < raw.ncols() => {
                    let class = dictionary.atom_labels()[k];
                    reinit_atom(&mut raw, &mut work, ds, class, k, &mut taken)?;
                    log::info!("iteration {t}: reinitialized atom {k}");
                    trace.atom_reinit_events.push((t, k));
                }
                Err(e) => return Err(e),
            }
        };
        let next_dictionary = Dictionary::new(atoms, dictionary.atom_labels().to_vec(), num_classes)?;
        let normalized = normalized.into_inner();
        let svm_fit = fit_multiclass(&normalized, &ds.labels, num_classes, params.theta)?;
        let next_graph = build_graph(next_dictionary.atoms(), params)?;
        let terms = objective(
            x,
            next_dictionary.atoms(),
            &normalized,
            &next_graph.laplacian,
            &svm_fit.model,
            &ds.labels,
            params,
        )?;

        observer.on_sweep(&SweepSnapshot {
            iteration: t,
            graph: &graph,
            dictionary_before: &dictionary,
            codes_before: &codes,
            svm_before: &svm,
            codes: &coded,
            active_sizes: &sweep.active_sizes,
            raw_atoms: &raw,
            ridge,
            dictionary: &next_dictionary,
            normalized_codes: &normalized,
            svm_fit: &svm_fit,
            objective: terms,
        });
        log::debug!("iteration {t}: objective {:e}", terms.total);

        trace.objective_per_iter.push(terms.total);
        trace.active_set_sizes.push(sweep.active_sizes.iter().sum());
        dictionary = next_dictionary;
        codes = normalized;
        svm = svm_fit.model;
        graph = next_graph;

        if let [.., prev, last] = trace.objective_per_iter[..] {
            if (prev - last).abs() < CONVERGENCE_TOL * prev.abs() {
                break;
            }
        }
    }

    let projector = build_projector(&dictionary, params.eta1)?;
    let names = (1..=num_classes).map(|c| c.to_string()).collect();
    Ok((
        TrainedModel {
            dictionary,
            svm,
            params: params.clone(),
            projector,
            label_map: LabelMap::from_names(names),
            pca: None,
        },
        trace,
    ))
}

/// Codes `x` with a fresh projector for `dictionary` and returns
/// `argmin_c` of the regularized residual.
pub fn residual_predictions(dictionary: &Dictionary, eta1: f64, x: &DMatrix<f64>) -> Result<Vec<usize>> {
    let projector = build_projector(dictionary, eta1)?;
    let codes = &projector.matrix * x;
    (0..x.ncols())
        .map(|i| {
            let xi: DVector<f64> = x.column(i).into_owned();
            let r = crate::classifier::regularized_residuals(&xi, &codes.column(i).into_owned(), dictionary)?;
            Ok(crate::classifier::argmin(r.as_slice()) + 1)
        })
        .collect()
}
