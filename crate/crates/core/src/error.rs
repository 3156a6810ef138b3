//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("label count {labels} does not match sample count {samples}")]
    LengthMismatch { labels: usize, samples: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("class index {class} outside 1..={num_classes}")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("empty input")]
    EmptyInput,

    #[error("knn_k = {knn_k} must be at most K - 1 = {max}")]
    KTooLarge { knn_k: usize, max: usize },
    #[error("heat-kernel bandwidth must be positive, got {0}")]
    NonPositiveDelta(f64),
    #[error("similarity matrix is not symmetric")]
    AsymmetricInput,
    #[error("similarity matrix has a negative entry at ({row}, {col})")]
    NegativeSimilarity { row: usize, col: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("linear system is singular even after ridge stabilization")]
    SingularSystem,
    #[error("Gram matrix ZZ^T is singular and no ridge was given")]
    SingularGram,
    #[error("atom {0} collapsed to zero norm")]
    DegenerateAtom(usize),

    #[error("column {column}: {source}")]
    Column {
        column: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("class {class}: {source}")]
    Class {
        class: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line} has {found} fields, expected {expected}")]
    DimensionInconsistent { line: usize, expected: usize, found: usize },
    #[error("PCA target {requested} exceeds min(m, n) = {max}")]
    TargetTooLarge { requested: usize, max: usize },
    #[error("class {class} has {available} samples, needs at least {required}")]
    InsufficientClassSamples {
        class: usize,
        available: usize,
        required: usize,
    },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("bad file format: {0}")]
    Format(String),
    #[error("unsupported model file version {0}")]
    ModelVersion(u8),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_column(self, column: usize) -> Self {
        Error::Column {
            column,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_class(self, class: usize) -> Self {
        Error::Class {
            class,
            source: Box::new(self),
        }
    }

    /// Innermost error, with column/class context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Column { source, .. } | Error::Class { source, .. } => source.root(),
            other => other,
        }
    }
}
