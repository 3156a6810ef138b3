//! Feature files, PCA reduction, seeded per-class splits and synthetic data.
//!
//! Two on-disk layouts are supported:
//!
//! * CSV, one sample per row. An optional first row is a header; when its
//!   first field is `label`, the first column of every row is the class label.
//! * raw-f64: `LCDM`, version byte `0x01`, `m` and `n` as little-endian
//!   `u64`, then `m * n` little-endian `f64` in column-major order. An
//!   optional trailing block `LBLS` followed by `n` little-endian `u32`
//!   carries labels.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{FeatureMatrix, LabeledDataset};

pub const RAW_MAGIC: &[u8; 4] = b"LCDM";
pub const RAW_LABEL_MAGIC: &[u8; 4] = b"LBLS";
pub const RAW_VERSION: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    RawF64,
}

/// A loaded feature file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub features: FeatureMatrix,
    pub labels: Option<Vec<String>>,
}

/// Loads `path`, sniffing the format from its leading bytes when `format`
/// is `None`.
pub fn load_matrix(path: impl AsRef<Path>, format: Option<FileFormat>) -> Result<FeatureTable> {
    let bytes = fs::read(path)?;
    let format = format.unwrap_or(if bytes.starts_with(RAW_MAGIC) {
        FileFormat::RawF64
    } else {
        FileFormat::Csv
    });
    match format {
        FileFormat::RawF64 => parse_raw(&bytes),
        FileFormat::Csv => {
            let text = std::str::from_utf8(&bytes).map_err(|e| Error::Format(format!("CSV is not UTF-8: {e}")))?;
            parse_csv(text)
        }
    }
}

pub fn parse_csv(text: &str) -> Result<FeatureTable> {
    let mut rows: Vec<(usize, Vec<&str>)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| (i, l.split(',').map(str::trim).collect()))
        .collect();
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut has_labels = false;
    let first = &rows[0].1;
    if first.iter().any(|f| f.parse::<f64>().is_err()) {
        has_labels = first[0].eq_ignore_ascii_case("label");
        rows.remove(0);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let width = rows[0].1.len();
    let m = width - usize::from(has_labels);
    if m == 0 {
        return Err(Error::Parse {
            line: rows[0].0,
            msg: "row has no feature columns".into(),
        });
    }
    let n = rows.len();
    let mut values = DMatrix::zeros(m, n);
    let mut labels = Vec::new();
    for (col, (line, fields)) in rows.iter().enumerate() {
        if fields.len() != width {
            return Err(Error::DimensionInconsistent {
                line: *line,
                expected: width,
                found: fields.len(),
            });
        }
        let features = if has_labels {
            labels.push(fields[0].to_string());
            &fields[1..]
        } else {
            &fields[..]
        };
        for (row, f) in features.iter().enumerate() {
            values[(row, col)] = f.parse::<f64>().map_err(|e| Error::Parse {
                line: *line,
                msg: format!("{f:?}: {e}"),
            })?;
        }
    }
    let features = FeatureMatrix::new(values).map_err(|e| match e {
        Error::NonFiniteEntry { col, .. } => Error::Parse {
            line: rows[col].0,
            msg: "non-finite value".into(),
        },
        other => other,
    })?;
    Ok(FeatureTable {
        features,
        labels: has_labels.then_some(labels),
    })
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, len: usize) -> Result<&'a [u8]> {
    let end = at
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Format("truncated raw-f64 file".into()))?;
    let out = &bytes[*at..end];
    *at = end;
    Ok(out)
}

pub fn parse_raw(bytes: &[u8]) -> Result<FeatureTable> {
    let mut at = 0;
    if take(bytes, &mut at, 4)? != RAW_MAGIC {
        return Err(Error::Format("missing LCDM magic".into()));
    }
    let version = take(bytes, &mut at, 1)?[0];
    if version != RAW_VERSION {
        return Err(Error::Format(format!("unsupported raw-f64 version {version}")));
    }
    let m = u64::from_le_bytes(take(bytes, &mut at, 8)?.try_into().unwrap()) as usize;
    let n = u64::from_le_bytes(take(bytes, &mut at, 8)?.try_into().unwrap()) as usize;
    let count = m
        .checked_mul(n)
        .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
    let data = take(
        bytes,
        &mut at,
        count
            .checked_mul(8)
            .ok_or_else(|| Error::Format("matrix size overflows".into()))?,
    )?;
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let features = FeatureMatrix::new(DMatrix::from_column_slice(m, n, &values))?;
    let labels = if at == bytes.len() {
        None
    } else {
        if take(bytes, &mut at, 4)? != RAW_LABEL_MAGIC {
            return Err(Error::Format("unexpected trailing bytes".into()));
        }
        let block = take(bytes, &mut at, n * 4)?;
        if at != bytes.len() {
            return Err(Error::Format("unexpected trailing bytes after labels".into()));
        }
        Some(
            block
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()).to_string())
                .collect(),
        )
    };
    Ok(FeatureTable { features, labels })
}

pub fn to_csv(features: &DMatrix<f64>, labels: Option<&[String]>) -> String {
    let mut out = String::new();
    if labels.is_some() {
        out.push_str("label");
        for i in 1..=features.nrows() {
            out.push_str(&format!(",f{i}"));
        }
        out.push('\n');
    }
    for (j, col) in features.column_iter().enumerate() {
        let mut fields: Vec<String> = Vec::with_capacity(col.len() + 1);
        if let Some(l) = labels {
            fields.push(l[j].clone());
        }
        fields.extend(col.iter().map(|v| v.to_string()));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Encodes a matrix (and optional numeric labels) as raw-f64.
pub fn to_raw(features: &DMatrix<f64>, labels: Option<&[u32]>) -> Vec<u8> {
    let mut out = Vec::with_capacity(21 + features.len() * 8);
    out.extend_from_slice(RAW_MAGIC);
    out.push(RAW_VERSION);
    out.extend_from_slice(&(features.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(features.ncols() as u64).to_le_bytes());
    for v in features.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(l) = labels {
        out.extend_from_slice(RAW_LABEL_MAGIC);
        for v in l {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// How many principal directions to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PcaTarget {
    Dims(usize),
    /// Smallest count whose cumulative variance share reaches this fraction.
    Variance(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaTransform {
    pub mean: DVector<f64>,
    /// `m_in x m_out`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Sample variance along each kept direction, non-increasing.
    pub variances: DVector<f64>,
    pub explained_variance_ratio: f64,
}

impl PcaTransform {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// `basis * y + mean`, the inverse of [`pca_apply`] on the kept subspace.
    pub fn reconstruct(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = &self.basis * y;
        for mut col in x.column_iter_mut() {
            col += &self.mean;
        }
        x
    }
}

/// Share tolerance when matching a variance fraction.
const VARIANCE_TOL: f64 = 1e-12;

pub fn pca_fit(x: &DMatrix<f64>, target: PcaTarget) -> Result<PcaTransform> {
    let (m, n) = x.shape();
    if n < 2 {
        return Err(Error::InvalidParam("PCA needs at least two samples".into()));
    }
    let mean = x.column_mean();
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let svd = centered.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::InvalidParam("SVD did not converge".into()))?;
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));
    let eig: Vec<f64> = order.iter().map(|&i| sv[i] * sv[i] / (n - 1) as f64).collect();
    let total: f64 = eig.iter().sum();
    let available = m.min(n);

    let keep = match target {
        PcaTarget::Dims(d) => {
            if d == 0 {
                return Err(Error::InvalidParam("PCA target must be positive".into()));
            }
            if d > available {
                return Err(Error::TargetTooLarge {
                    requested: d,
                    max: available,
                });
            }
            d
        }
        PcaTarget::Variance(f) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidParam(format!(
                    "variance fraction must be in (0, 1], got {f}"
                )));
            }
            let goal = (f - VARIANCE_TOL) * total;
            let mut cum = 0.0;
            let mut keep = eig.len();
            for (i, &e) in eig.iter().enumerate() {
                cum += e;
                if cum >= goal {
                    keep = i + 1;
                    break;
                }
            }
            keep.max(1)
        }
    };

    let mut basis = DMatrix::zeros(m, keep);
    for (j, &src) in order.iter().take(keep).enumerate() {
        let mut col = u.column(src).into_owned();
        let lead = col
            .iter()
            .enumerate()
            .fold(0, |best, (i, v)| if v.abs() > col[best].abs() { i } else { best });
        if col[lead] < 0.0 {
            col.neg_mut();
        }
        basis.set_column(j, &col);
    }
    let kept: f64 = eig[..keep].iter().sum();
    Ok(PcaTransform {
        mean,
        basis,
        variances: DVector::from_row_slice(&eig[..keep]),
        explained_variance_ratio: if total > 0.0 { kept / total } else { 1.0 },
    })
}

pub fn pca_apply(t: &PcaTransform, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != t.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "features have dimension {} but the PCA expects {}",
            x.nrows(),
            t.input_dim()
        )));
    }
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &t.mean;
    }
    Ok(t.basis.tr_mul(&centered))
}

/// Seeded split taking exactly `train_per_class` samples of every class for
/// training. Both halves keep the original column order.
pub fn split_per_class(
    ds: &LabeledDataset,
    train_per_class: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 1..=ds.num_classes {
        let members = ds.class_indices(c);
        if members.len() < train_per_class + 1 {
            return Err(Error::InsufficientClassSamples {
                class: c,
                available: members.len(),
                required: train_per_class + 1,
            });
        }
        let mut chosen = vec![false; members.len()];
        for i in index::sample(&mut rng, members.len(), train_per_class) {
            chosen[i] = true;
        }
        for (i, &col) in members.iter().enumerate() {
            if chosen[i] {
                train.push(col);
            } else {
                test.push(col);
            }
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.select(&train)?, ds.select(&test)?))
}

/// Gaussian class clusters around seeded means on a sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Radius of the sphere holding the class means.
    pub separation: f64,
    /// Per-coordinate standard deviation around each mean.
    pub spread: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            dim: 20,
            per_class: 60,
            separation: 5.0,
            spread: 1.0,
            seed: 1,
        }
    }
}

pub fn synthesize(cfg: &SynthConfig) -> Result<LabeledDataset> {
    if cfg.classes == 0 || cfg.dim == 0 || cfg.per_class == 0 {
        return Err(Error::InvalidParam(
            "classes, dim and per_class must be positive".into(),
        ));
    }
    if !(cfg.separation.is_finite() && cfg.separation >= 0.0 && cfg.spread.is_finite() && cfg.spread >= 0.0) {
        return Err(Error::InvalidParam(
            "separation and spread must be finite and nonnegative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let mut means = Vec::with_capacity(cfg.classes);
    for _ in 0..cfg.classes {
        let mut v = DVector::from_fn(cfg.dim, |_, _| gauss(&mut rng));
        while v.norm() == 0.0 {
            v = DVector::from_fn(cfg.dim, |_, _| gauss(&mut rng));
        }
        means.push(v.normalize() * cfg.separation);
    }
    let n = cfg.classes * cfg.per_class;
    let mut x = DMatrix::zeros(cfg.dim, n);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for j in 0..cfg.per_class {
            let col = c * cfg.per_class + j;
            for r in 0..cfg.dim {
                x[(r, col)] = mean[r] + cfg.spread * gauss(&mut rng);
            }
            labels.push(c + 1);
        }
    }
    Ok(LabeledDataset::new(FeatureMatrix::new(x)?, labels, cfg.classes))
}
