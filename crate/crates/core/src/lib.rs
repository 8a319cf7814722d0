//! Spam review detection over Amazon-style review corpora.
//!
//! The crate is organised as a pipeline of stages, each usable on its own:
//!
//! - [`corpus`]: streaming JSON-lines ingestion, cleaning, deduplication, splitting
//! - [`textproc`]: tokenization, stop words, vocabulary, TF-IDF
//! - [`features`]: behavioral features, chi-square selection, correlation, matrix assembly
//! - [`models`]: logistic regression, linear SVM, CART, random forest, gradient boosting
//! - [`eval`]: confusion matrices, accuracy/precision/recall/F1, model comparison
//! - [`analysis`]: monthly review volume and reviewer-frequency segmentation
//! - [`pipeline`]: staged on-disk orchestration used by the `revspam` binary
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); metric arithmetic is
//! additionally available in exact rational form. The aliases below fix the
//! scalar to `f64`, which is what the pipeline uses.

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod models;
pub mod num;
pub mod pipeline;
pub mod rng;
pub mod sparse;
pub mod synth;
pub mod textproc;

pub use error::{Error, Result};
pub use num::Scalar;
pub use sparse::SparseVector;

/// Sparse feature row in double precision.
pub type SparseVec = sparse::SparseVector<f64>;
/// Feature matrix in double precision.
pub type Matrix = features::FeatureMatrix<f64>;
/// Fitted TF-IDF model in double precision.
pub type TfIdf = textproc::TfIdfModel<f64>;
/// Trained classifier in double precision.
pub type Model = models::TrainedModel<f64>;
/// Training hyperparameters in double precision.
pub type Config = models::TrainConfig<f64>;
/// Metrics report in double precision.
pub type Report = eval::MetricsReport<f64>;
/// Metrics report computed in exact rational arithmetic.
pub type ExactReport = eval::MetricsReport<eval::ExactRatio>;
