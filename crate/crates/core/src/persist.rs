//! Binary model files and flat `key = value` configuration.
//!
//! Model layout, all integers and floats little-endian:
//!
//! ```text
//! "LCDS" | version u8 = 1
//! m u64 | K u64 | C u64
//! lambda1 lambda2 theta eta1 eta2 f64 | atoms_per_class u64 | knn_k u64
//! delta f64 (NaN = automatic) | max_iters u64 | ridge_eps f64 (NaN = automatic) | seed u64
//! atoms       m*K f64, column-major
//! atom labels K u32
//! normals     K*C f64, column-major
//! biases      C f64
//! projector   K*m f64, column-major
//! PCA flag u8; when 1: m_in u64 | m_out u64 | mean | basis (column-major) | variances | ratio f64
//! label count u64, then per label: byte length u32 + UTF-8 bytes
//! ```

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::classifier::Projector;
use crate::error::{Error, Result};
use crate::ingest::PcaTransform;
use crate::model::{Dictionary, HyperParams, LabelMap};
use crate::svm::SvmModel;
use crate::trainer::TrainedModel;

pub const MODEL_MAGIC: &[u8; 4] = b"LCDS";
pub const MODEL_VERSION: u8 = 0x01;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn opt_f64(&mut self, v: Option<f64>) {
        self.f64(v.unwrap_or(f64::NAN));
    }
    fn values<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for &v in vs {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated model file".into()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("size does not fit in memory".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn opt_f64(&mut self) -> Result<Option<f64>> {
        let v = self.f64()?;
        Ok((!v.is_nan()).then_some(v))
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("matrix size overflows".into()))?;
        let raw = self.take(
            count
                .checked_mul(8)
                .ok_or_else(|| Error::Format("matrix size overflows".into()))?,
        )?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(DMatrix::from_column_slice(rows, cols, &values))
    }
    fn vector(&mut self, len: usize) -> Result<DVector<f64>> {
        Ok(DVector::from_column_slice(self.matrix(len, 1)?.as_slice()))
    }
}

pub fn encode_model(model: &TrainedModel) -> Vec<u8> {
    let d = &model.dictionary;
    let (m, k, c) = (d.dim(), d.num_atoms(), d.num_classes());
    let p = &model.params;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MODEL_MAGIC);
    w.u8(MODEL_VERSION);
    w.usize(m);
    w.usize(k);
    w.usize(c);
    for v in [p.lambda1, p.lambda2, p.theta, p.eta1, p.eta2] {
        w.f64(v);
    }
    w.usize(p.atoms_per_class);
    w.usize(p.knn_k);
    w.opt_f64(p.delta);
    w.usize(p.max_iters);
    w.opt_f64(p.ridge_eps);
    w.u64(p.seed);

    w.values(d.atoms().iter());
    for &l in d.atom_labels() {
        w.u32(l as u32);
    }
    w.values(model.svm.normals.iter());
    w.values(model.svm.biases.iter());
    w.values(model.projector.matrix.iter());

    match &model.pca {
        None => w.u8(0),
        Some(t) => {
            w.u8(1);
            w.usize(t.input_dim());
            w.usize(t.output_dim());
            w.values(t.mean.iter());
            w.values(t.basis.iter());
            w.values(t.variances.iter());
            w.f64(t.explained_variance_ratio);
        }
    }
    let names = model.label_map.names();
    w.usize(names.len());
    for name in names {
        w.u32(name.len() as u32);
        w.0.extend_from_slice(name.as_bytes());
    }
    w.0
}

pub fn decode_model(bytes: &[u8]) -> Result<TrainedModel> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4)? != MODEL_MAGIC {
        return Err(Error::Format("missing LCDS magic".into()));
    }
    let version = r.u8()?;
    if version != MODEL_VERSION {
        return Err(Error::ModelVersion(version));
    }
    let m = r.usize()?;
    let k = r.usize()?;
    let c = r.usize()?;
    let params = HyperParams {
        lambda1: r.f64()?,
        lambda2: r.f64()?,
        theta: r.f64()?,
        eta1: r.f64()?,
        eta2: r.f64()?,
        atoms_per_class: r.usize()?,
        knn_k: r.usize()?,
        delta: r.opt_f64()?,
        max_iters: r.usize()?,
        ridge_eps: r.opt_f64()?,
        seed: r.u64()?,
    };
    let atoms = r.matrix(m, k)?;
    let atom_labels = (0..k)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let dictionary = Dictionary::new(atoms, atom_labels, c)?;
    let svm = SvmModel::new(r.matrix(k, c)?, r.vector(c)?)?;
    let projector = Projector {
        matrix: r.matrix(k, m)?,
    };

    let pca = match r.u8()? {
        0 => None,
        1 => {
            let m_in = r.usize()?;
            let m_out = r.usize()?;
            if m_out != m {
                return Err(Error::Format(format!(
                    "PCA outputs {m_out} dimensions but the dictionary has {m}"
                )));
            }
            Some(PcaTransform {
                mean: r.vector(m_in)?,
                basis: r.matrix(m_in, m_out)?,
                variances: r.vector(m_out)?,
                explained_variance_ratio: r.f64()?,
            })
        }
        flag => return Err(Error::Format(format!("bad PCA flag {flag}"))),
    };

    let count = r.usize()?;
    if count != c {
        return Err(Error::Format(format!("{count} label names for {c} classes")));
    }
    let mut names = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let raw = r.take(len)?;
        names.push(String::from_utf8(raw.to_vec()).map_err(|_| Error::Format("label is not UTF-8".into()))?);
    }
    if r.at != bytes.len() {
        return Err(Error::Format("trailing bytes after model".into()));
    }
    Ok(TrainedModel {
        dictionary,
        svm,
        params,
        projector,
        label_map: LabelMap::from_names(names),
        pca,
    })
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<std::path::Path>) -> Result<()> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<std::path::Path>) -> Result<TrainedModel> {
    decode_model(&std::fs::read(path)?)
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// hyphens in keys are read as underscores. Later entries win.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = match line.find('#') {
            Some(p) => &line[..p],
            None => line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected `key = value`, got {line:?}"),
        })?;
        let key = key.trim().replace('-', "_");
        if key.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "empty key".into(),
            });
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidParam(format!("{key}: cannot parse {value:?}")))
}

fn parse_auto(key: &str, value: &str) -> Result<Option<f64>> {
    if value.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

/// Names of the hyperparameter keys understood by [`apply_param`].
pub const PARAM_KEYS: &[&str] = &[
    "lambda1",
    "lambda2",
    "theta",
    "eta1",
    "eta2",
    "atoms_per_class",
    "knn_k",
    "delta",
    "max_iters",
    "ridge_eps",
    "seed",
];

/// Sets one hyperparameter by name. Returns `Ok(false)` for keys that are
/// not hyperparameters.
pub fn apply_param(params: &mut HyperParams, key: &str, value: &str) -> Result<bool> {
    match key {
        "lambda1" => params.lambda1 = parse_value(key, value)?,
        "lambda2" => params.lambda2 = parse_value(key, value)?,
        "theta" => params.theta = parse_value(key, value)?,
        "eta1" => params.eta1 = parse_value(key, value)?,
        "eta2" => params.eta2 = parse_value(key, value)?,
        "atoms_per_class" => params.atoms_per_class = parse_value(key, value)?,
        "knn_k" => params.knn_k = parse_value(key, value)?,
        "delta" => params.delta = parse_auto(key, value)?,
        "max_iters" => params.max_iters = parse_value(key, value)?,
        "ridge_eps" => params.ridge_eps = parse_auto(key, value)?,
        "seed" => params.seed = parse_value(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// `key = value` lines for every hyperparameter, in [`PARAM_KEYS`] order.
pub fn params_to_config(params: &HyperParams) -> Vec<String> {
    let auto = |v: Option<f64>| v.map_or_else(|| "auto".to_string(), |v| v.to_string());
    vec![
        format!("lambda1 = {}", params.lambda1),
        format!("lambda2 = {}", params.lambda2),
        format!("theta = {}", params.theta),
        format!("eta1 = {}", params.eta1),
        format!("eta2 = {}", params.eta2),
        format!("atoms_per_class = {}", params.atoms_per_class),
        format!("knn_k = {}", params.knn_k),
        format!("delta = {}", auto(params.delta)),
        format!("max_iters = {}", params.max_iters),
        format!("ridge_eps = {}", auto(params.ridge_eps)),
        format!("seed = {}", params.seed),
    ]
}
