//! Locality-constrained dictionary learning with a jointly trained
//! one-vs-all squared-hinge SVM.
//!
//! Training alternates between coding the samples (with a graph-Laplacian
//! penalty over dictionary atoms and a margin term from the current SVM),
//! refitting the dictionary, and refitting the SVM. Test samples are coded
//! with a ridge projector and labelled by fusing per-class regularized
//! residuals with the SVM scores.

pub mod classifier;
pub mod coder;
pub mod dict;
pub mod error;
pub mod graph;
pub mod ingest;
mod linalg;
pub mod model;
pub mod persist;
pub mod svm;
pub mod trainer;

pub use classifier::{classify, classify_batch, BatchReport, Decision, Projector};
pub use error::{Error, Result};
pub use model::{CodingMatrix, Dictionary, FeatureMatrix, HyperParams, LabelMap, LabeledDataset};
pub use svm::SvmModel;
pub use trainer::{train, TrainTrace, TrainedModel};
