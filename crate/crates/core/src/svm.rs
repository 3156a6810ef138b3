//! One-vs-all linear SVM with the squared hinge loss.
//!
//! Each class solves
//!
//! ```text
//! min_{u,b} ||u||^2 + theta * sum_i max(0, 1 - y_i (u^T z_i + b))^2
//! ```
//!
//! with an unregularized bias. The objective is piecewise quadratic, so a
//! primal active-set Newton method is exact on each piece: solve the
//! least-squares problem restricted to the margin violators, take an exact
//! line search along that direction, and repeat until the violator set stops
//! changing.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::model::one_vs_all_targets;

/// Round cap for the active-set iteration.
pub const MAX_ROUNDS: usize = 100;

/// Hyperplanes `u_c` (columns of `normals`) and biases `b_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub normals: DMatrix<f64>,
    pub biases: DVector<f64>,
}

impl SvmModel {
    pub fn new(normals: DMatrix<f64>, biases: DVector<f64>) -> Result<Self> {
        if normals.ncols() != biases.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} normals but {} biases",
                normals.ncols(),
                biases.len()
            )));
        }
        if normals.iter().chain(biases.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("SVM parameters must be finite".into()));
        }
        Ok(Self { normals, biases })
    }

    pub fn zeros(num_atoms: usize, num_classes: usize) -> Self {
        Self {
            normals: DMatrix::zeros(num_atoms, num_classes),
            biases: DVector::zeros(num_classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.biases.len()
    }

    pub fn num_atoms(&self) -> usize {
        self.normals.nrows()
    }
}

/// Result of one binary fit.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFit {
    pub normal: DVector<f64>,
    pub bias: f64,
    pub objective: f64,
    /// Euclidean norm of the objective gradient at the returned point.
    pub kkt_residual: f64,
    pub rounds: usize,
    /// `false` when the round cap was hit; the best iterate is still returned.
    pub converged: bool,
}

/// Tolerance on [`BinaryFit::kkt_residual`] for `n` samples.
pub fn kkt_tolerance(theta: f64, n: usize) -> f64 {
    1e-8 * (1.0 + theta * n as f64)
}

fn decision_values(z: &DMatrix<f64>, u: &DVector<f64>, b: f64) -> DVector<f64> {
    z.tr_mul(u).add_scalar(b)
}

pub fn binary_objective(z: &DMatrix<f64>, targets: &DVector<f64>, u: &DVector<f64>, b: f64, theta: f64) -> f64 {
    let f = decision_values(z, u, b);
    let loss: f64 = f
        .iter()
        .zip(targets.iter())
        .map(|(&fi, &yi)| {
            let slack = (1.0 - yi * fi).max(0.0);
            slack * slack
        })
        .sum();
    u.norm_squared() + theta * loss
}

/// Gradient of [`binary_objective`] with respect to `(u, b)`, bias last.
pub fn binary_gradient(z: &DMatrix<f64>, targets: &DVector<f64>, u: &DVector<f64>, b: f64, theta: f64) -> DVector<f64> {
    let k = z.nrows();
    let f = decision_values(z, u, b);
    let mut grad = DVector::zeros(k + 1);
    grad.rows_mut(0, k).copy_from(&(u * 2.0));
    for i in 0..z.ncols() {
        let slack = 1.0 - targets[i] * f[i];
        if slack > 0.0 {
            let w = -2.0 * theta * targets[i] * slack;
            grad.rows_mut(0, k).axpy(w, &z.column(i), 1.0);
            grad[k] += w;
        }
    }
    grad
}

fn violators(f: &DVector<f64>, targets: &DVector<f64>) -> Vec<usize> {
    (0..f.len()).filter(|&i| targets[i] * f[i] < 1.0).collect()
}

/// Minimizer of the quadratic obtained by freezing the violator set.
fn restricted_solve(
    z: &DMatrix<f64>,
    targets: &DVector<f64>,
    active: &[usize],
    theta: f64,
    current_bias: f64,
) -> Result<(DVector<f64>, f64)> {
    let k = z.nrows();
    if active.is_empty() {
        // Only ||u||^2 is left and it does not involve the bias.
        return Ok((DVector::zeros(k), current_bias));
    }
    let mut h = DMatrix::zeros(k + 1, k + 1);
    let mut rhs = DVector::zeros(k + 1);
    for d in 0..k {
        h[(d, d)] = 1.0;
    }
    let mut aug = DVector::zeros(k + 1);
    for &i in active {
        aug.rows_mut(0, k).copy_from(&z.column(i));
        aug[k] = 1.0;
        h.ger(theta, &aug, &aug, 1.0);
        rhs.axpy(theta * targets[i], &aug, 1.0);
    }
    let w = SpdFactor::new(&h)?.solve(&rhs);
    Ok((w.rows(0, k).into_owned(), w[k]))
}

/// Exact minimizer over `s >= 0` of the objective along `(du, db)`.
fn line_search(u: &DVector<f64>, du: &DVector<f64>, slack: &[f64], gain: &[f64], theta: f64) -> f64 {
    // phi'(s) / 2 = alpha + beta * s on each interval between breakpoints.
    let mut alpha = u.dot(du);
    let mut beta = du.norm_squared();
    let mut events: Vec<(f64, usize)> = Vec::new();
    for (i, (&r, &g)) in slack.iter().zip(gain).enumerate() {
        let active_now = r > 0.0 || (r == 0.0 && g < 0.0);
        if active_now {
            alpha -= theta * g * r;
            beta += theta * g * g;
        }
        if g != 0.0 {
            let s = r / g;
            if s > 0.0 {
                events.push((s, i));
            }
        }
    }
    if alpha >= 0.0 {
        return 0.0;
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (at, i) in events {
        if beta > 0.0 {
            let root = -alpha / beta;
            if root <= at {
                return root;
            }
        }
        let (r, g) = (slack[i], gain[i]);
        let sign = if g > 0.0 { -1.0 } else { 1.0 };
        alpha += sign * (-theta * g * r);
        beta += sign * theta * g * g;
    }
    if beta > 0.0 {
        -alpha / beta
    } else {
        1.0
    }
}

/// Fits one hyperplane against `targets` (entries `+1`/`-1`).
pub fn fit_binary_squared_hinge(z: &DMatrix<f64>, targets: &DVector<f64>, theta: f64) -> Result<BinaryFit> {
    let (k, n) = z.shape();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if targets.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} coding vectors",
            targets.len(),
            n
        )));
    }
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::InvalidParam(format!("theta must be positive, got {theta}")));
    }

    let tol = kkt_tolerance(theta, n);
    let mut u = DVector::zeros(k);
    let mut b = 0.0;
    let mut f = decision_values(z, &u, b);
    let mut rounds = 0;
    let mut converged = false;

    loop {
        if binary_gradient(z, targets, &u, b, theta).norm() <= tol {
            converged = true;
            break;
        }
        if rounds == MAX_ROUNDS {
            break;
        }
        rounds += 1;
        let active = violators(&f, targets);
        let (u_new, b_new) = restricted_solve(z, targets, &active, theta, b)?;
        let du = &u_new - &u;
        let db = b_new - b;
        let delta = decision_values(z, &du, db);
        let slack: Vec<f64> = (0..n).map(|i| 1.0 - targets[i] * f[i]).collect();
        let gain: Vec<f64> = (0..n).map(|i| targets[i] * delta[i]).collect();
        let step = line_search(&u, &du, &slack, &gain, theta);
        if step == 0.0 {
            break;
        }
        u.axpy(step, &du, 1.0);
        b += step * db;
        f = decision_values(z, &u, b);
    }

    if !converged {
        log::warn!("squared-hinge SVM did not settle within {MAX_ROUNDS} rounds");
    }
    let grad = binary_gradient(z, targets, &u, b, theta);
    Ok(BinaryFit {
        objective: binary_objective(z, targets, &u, b, theta),
        kkt_residual: grad.norm(),
        normal: u,
        bias: b,
        rounds,
        converged,
    })
}

/// Model plus the per-class fit diagnostics.
#[derive(Debug, Clone)]
pub struct SvmFit {
    pub model: SvmModel,
    pub per_class: Vec<BinaryFit>,
}

/// Independent one-vs-all fits for classes `1..=num_classes`.
pub fn fit_multiclass(z: &DMatrix<f64>, labels: &[usize], num_classes: usize, theta: f64) -> Result<SvmFit> {
    if labels.len() != z.ncols() {
        return Err(Error::LengthMismatch {
            labels: labels.len(),
            samples: z.ncols(),
        });
    }
    let per_class = (1..=num_classes)
        .into_par_iter()
        .map(|c| {
            let targets = one_vs_all_targets(labels, c, num_classes)?;
            fit_binary_squared_hinge(z, &targets, theta).map_err(|e| e.in_class(c))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut normals = DMatrix::zeros(z.nrows(), num_classes);
    let mut biases = DVector::zeros(num_classes);
    for (c, fit) in per_class.iter().enumerate() {
        normals.set_column(c, &fit.normal);
        biases[c] = fit.bias;
    }
    Ok(SvmFit {
        model: SvmModel { normals, biases },
        per_class,
    })
}

/// `s_c = u_c^T z + b_c` for every class.
pub fn svm_scores(z: &DVector<f64>, model: &SvmModel) -> Result<DVector<f64>> {
    if z.len() != model.num_atoms() {
        return Err(Error::DimensionMismatch(format!(
            "coding vector has length {} but the SVM expects {}",
            z.len(),
            model.num_atoms()
        )));
    }
    Ok(model.normals.tr_mul(z) + &model.biases)
}
