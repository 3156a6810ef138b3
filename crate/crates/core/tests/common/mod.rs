//! Instance generators and independent reference solvers for the
//! integration tests. Nothing here calls the library's solvers.

#![allow(dead_code)]

use lcdl::{Dictionary, SvmModel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gauss_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| gauss(rng))
}

pub fn gauss_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| gauss(rng))
}

/// Sorted atom labels where each of the `c` classes owns at least one atom.
pub fn atom_labels(rng: &mut ChaCha8Rng, k: usize, c: usize) -> Vec<usize> {
    assert!(k >= c);
    let mut labels: Vec<usize> = (1..=c).collect();
    labels.extend((c..k).map(|_| rng.random_range(1..=c)));
    labels.sort_unstable();
    labels
}

pub fn random_dictionary(rng: &mut ChaCha8Rng, m: usize, k: usize, c: usize) -> Dictionary {
    let mut atoms = gauss_matrix(rng, m, k);
    for mut col in atoms.column_iter_mut() {
        let n = col.norm();
        col /= n;
    }
    Dictionary::new(atoms, atom_labels(rng, k, c), c).unwrap()
}

pub fn random_svm(rng: &mut ChaCha8Rng, k: usize, c: usize) -> SvmModel {
    SvmModel::new(gauss_matrix(rng, k, c), gauss_vector(rng, c)).unwrap()
}

/// Labels `1..=c` with every class present.
pub fn sample_labels(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<usize> {
    assert!(n >= c);
    let mut labels: Vec<usize> = (1..=c).collect();
    labels.extend((c..n).map(|_| rng.random_range(1..=c)));
    labels
}

pub fn pm_one(label: usize, c: usize) -> f64 {
    if label == c {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone)]
pub struct Descent {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Gradient target for [`descend`].
pub const ORACLE_GRAD_TOL: f64 = 1e-10;

/// Barzilai-Borwein gradient descent with a nonmonotone Armijo safeguard,
/// run until the gradient norm is at most [`ORACLE_GRAD_TOL`].
pub fn descend(
    f: impl Fn(&DVector<f64>) -> f64,
    grad: impl Fn(&DVector<f64>) -> DVector<f64>,
    x0: DVector<f64>,
) -> Descent {
    const MEMORY: usize = 10;
    const MAX_ITERS: usize = 2_000_000;
    let mut x = x0;
    let mut fx = f(&x);
    let mut g = grad(&x);
    let mut history = vec![fx];
    let mut step = 1.0 / (1.0 + g.norm());
    let mut iterations = 0;
    while g.norm() > ORACLE_GRAD_TOL && iterations < MAX_ITERS {
        iterations += 1;
        let reference = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let slack = 4.0 * f64::EPSILON * reference.abs();
        let gg = g.norm_squared();
        let mut t = step;
        let (x_new, f_new) = loop {
            let cand = &x - &g * t;
            let fc = f(&cand);
            if fc <= reference - 1e-4 * t * gg + slack {
                break (cand, fc);
            }
            t *= 0.5;
            if t < 1e-30 {
                return Descent {
                    grad_norm: g.norm(),
                    x,
                    value: fx,
                    iterations,
                };
            }
        };
        let g_new = grad(&x_new);
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        step = if sy > 0.0 { s.norm_squared() / sy } else { 2.0 * t };
        x = x_new;
        fx = f_new;
        g = g_new;
        history.push(fx);
        if history.len() > MEMORY {
            history.remove(0);
        }
    }
    Descent {
        grad_norm: g.norm(),
        x,
        value: fx,
        iterations,
    }
}

/// One frozen margin term `(1 - y (u^T z + b))^2` of the guided coding problem.
#[derive(Debug, Clone)]
pub struct MarginTerm {
    pub normal: DVector<f64>,
    pub bias: f64,
    pub target: f64,
}

/// `||x - D z||^2 + lambda1 z^T L z + weight * sum (1 - y (u^T z + b))^2`
#[derive(Debug, Clone)]
pub struct CodingProblem {
    pub atoms: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
    pub x: DVector<f64>,
    pub lambda1: f64,
    pub weight: f64,
    pub terms: Vec<MarginTerm>,
}

impl CodingProblem {
    pub fn value(&self, z: &DVector<f64>) -> f64 {
        let rec = (&self.x - &self.atoms * z).norm_squared();
        let loc = z.dot(&(&self.laplacian * z));
        let margin: f64 = self
            .terms
            .iter()
            .map(|t| {
                let s = 1.0 - t.target * (t.normal.dot(z) + t.bias);
                s * s
            })
            .sum();
        rec + self.lambda1 * loc + self.weight * margin
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut g = self.atoms.transpose() * (&self.atoms * z - &self.x) * 2.0;
        g += &self.laplacian * z * (2.0 * self.lambda1);
        for t in &self.terms {
            let s = 1.0 - t.target * (t.normal.dot(z) + t.bias);
            g -= &t.normal * (2.0 * self.weight * t.target * s);
        }
        g
    }

    /// Scale against which a stationarity residual is measured.
    pub fn gradient_scale(&self, z: &DVector<f64>) -> f64 {
        let pull = (self.atoms.transpose() * &self.x).norm() * 2.0;
        let push = (self.atoms.transpose() * (&self.atoms * z)).norm() * 2.0;
        let loc = (&self.laplacian * z).norm() * 2.0 * self.lambda1;
        let margin: f64 = self
            .terms
            .iter()
            .map(|t| t.normal.norm() * 2.0 * self.weight * (1.0 + t.normal.dot(z).abs() + t.bias.abs()))
            .sum();
        1.0 + pull + push + loc + margin
    }

    pub fn solve_by_descent(&self) -> Descent {
        descend(
            |z| self.value(z),
            |z| self.gradient(z),
            DVector::zeros(self.atoms.ncols()),
        )
    }
}

/// `||u||^2 + theta sum max(0, 1 - y (u^T z + b))^2`, variables stacked as `(u, b)`.
#[derive(Debug, Clone)]
pub struct HingeProblem {
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
    pub theta: f64,
}

impl HingeProblem {
    fn split<'a>(&self, w: &'a DVector<f64>) -> (nalgebra::DVectorView<'a, f64>, f64) {
        let k = self.z.nrows();
        (w.rows(0, k), w[k])
    }

    pub fn slacks(&self, w: &DVector<f64>) -> Vec<f64> {
        let (u, b) = self.split(w);
        (0..self.z.ncols())
            .map(|i| (1.0 - self.y[i] * (u.dot(&self.z.column(i)) + b)).max(0.0))
            .collect()
    }

    pub fn hinge_total(&self, w: &DVector<f64>) -> f64 {
        self.slacks(w).iter().map(|s| s * s).sum()
    }

    pub fn value(&self, w: &DVector<f64>) -> f64 {
        let (u, _) = self.split(w);
        u.norm_squared() + self.theta * self.hinge_total(w)
    }

    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let k = self.z.nrows();
        let (u, _) = self.split(w);
        let mut g = DVector::zeros(k + 1);
        g.rows_mut(0, k).copy_from(&(u * 2.0));
        for (i, s) in self.slacks(w).into_iter().enumerate() {
            if s > 0.0 {
                let coef = -2.0 * self.theta * self.y[i] * s;
                for d in 0..k {
                    g[d] += coef * self.z[(d, i)];
                }
                g[k] += coef;
            }
        }
        g
    }

    pub fn stack(u: &DVector<f64>, b: f64) -> DVector<f64> {
        let k = u.len();
        DVector::from_fn(k + 1, |i, _| if i < k { u[i] } else { b })
    }

    pub fn solve_by_descent(&self) -> Descent {
        descend(
            |w| self.value(w),
            |w| self.gradient(w),
            DVector::zeros(self.z.nrows() + 1),
        )
    }
}

/// `tr(Z^T L Z)` as `1/2 sum_ij M_ij ||z^i - z^j||^2` over profile rows.
pub fn brute_force_energy(z: &DMatrix<f64>, similarity: &DMatrix<f64>) -> f64 {
    let k = z.nrows();
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            total += similarity[(i, j)] * (z.row(i) - z.row(j)).norm_squared();
        }
    }
    0.5 * total
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
