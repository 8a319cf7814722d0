//! The five classifiers behind one train/predict contract.
//!
//! Every trainer takes a [`FeatureMatrix`] whose positive label is spam and
//! returns a [`TrainedModel`] whose `predict` yields a spam score in `[0, 1]`.

pub mod ensemble;
pub mod linear;
pub mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::num::Scalar;
use crate::sparse::SparseVector;

pub use ensemble::{train_gradient_boosting, train_random_forest, Ensemble, EnsembleKind};
pub use linear::{train_linear_svm, train_logistic, LinearKind, LinearModel, Objective};
pub use tree::{best_split, train_decision_tree, Criterion, SplitCandidate, TreeNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[serde(alias = "lr")]
    Logistic,
    #[serde(alias = "svm")]
    LinearSvm,
    #[serde(alias = "rf")]
    RandomForest,
    #[serde(alias = "gb")]
    GradientBoosting,
    #[serde(alias = "dt")]
    DecisionTree,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Logistic,
        ModelKind::LinearSvm,
        ModelKind::RandomForest,
        ModelKind::GradientBoosting,
        ModelKind::DecisionTree,
    ];

    /// Short lowercase key used in configuration and file names.
    pub fn key(self) -> &'static str {
        match self {
            ModelKind::Logistic => "lr",
            ModelKind::LinearSvm => "svm",
            ModelKind::RandomForest => "rf",
            ModelKind::GradientBoosting => "gb",
            ModelKind::DecisionTree => "dt",
        }
    }

    /// Name used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Logistic => "LR",
            ModelKind::LinearSvm => "SVM",
            ModelKind::RandomForest => "RF",
            ModelKind::GradientBoosting => "GB",
            ModelKind::DecisionTree => "DT",
        }
    }

    pub fn default_config<T: Scalar>(self) -> TrainConfig<T> {
        match self {
            ModelKind::Logistic => TrainConfig::logistic(),
            ModelKind::LinearSvm => TrainConfig::linear_svm(),
            ModelKind::RandomForest => TrainConfig::random_forest(),
            ModelKind::GradientBoosting => TrainConfig::gradient_boosting(),
            ModelKind::DecisionTree => TrainConfig::decision_tree(),
        }
    }

    pub fn train<T: Scalar>(self, matrix: &FeatureMatrix<T>, config: &TrainConfig<T>) -> Result<TrainedModel<T>> {
        match self {
            ModelKind::Logistic => train_logistic(matrix, config),
            ModelKind::LinearSvm => train_linear_svm(matrix, config),
            ModelKind::RandomForest => train_random_forest(matrix, config),
            ModelKind::GradientBoosting => train_gradient_boosting(matrix, config),
            ModelKind::DecisionTree => train_decision_tree(matrix, config),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.key().eq_ignore_ascii_case(s) || k.display_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model `{s}` (expected one of lr, svm, rf, gb, dt)")))
    }
}

/// Training hyperparameters. Each trainer reads the fields relevant to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig<T> {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: T,
    pub l2_penalty: T,
    pub batch_size: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub n_trees: usize,
    /// Fraction of columns considered at each random forest split.
    /// `None` means `sqrt(V) / V`.
    pub feature_subsample_ratio: Option<T>,
    pub bootstrap: bool,
}

/// Node ids are packed into 64 bits, one bit per level.
pub const MAX_TREE_DEPTH: usize = 60;

impl<T: Scalar> TrainConfig<T> {
    fn base() -> Self {
        TrainConfig {
            seed: 42,
            epochs: 30,
            learning_rate: T::of(0.1),
            l2_penalty: T::of(1e-4),
            batch_size: 256,
            max_depth: 12,
            min_samples_leaf: 5,
            n_trees: 100,
            feature_subsample_ratio: None,
            bootstrap: true,
        }
    }

    pub fn logistic() -> Self {
        Self::base()
    }

    pub fn linear_svm() -> Self {
        TrainConfig {
            learning_rate: T::of(0.05),
            ..Self::base()
        }
    }

    pub fn decision_tree() -> Self {
        TrainConfig {
            max_depth: 12,
            min_samples_leaf: 5,
            ..Self::base()
        }
    }

    pub fn random_forest() -> Self {
        TrainConfig {
            max_depth: 16,
            min_samples_leaf: 1,
            n_trees: 100,
            ..Self::base()
        }
    }

    pub fn gradient_boosting() -> Self {
        TrainConfig {
            max_depth: 4,
            min_samples_leaf: 1,
            n_trees: 100,
            learning_rate: T::of(0.1),
            ..Self::base()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        TrainConfig { seed, ..self }
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("{}: {msg}", kind.key())));
        match kind {
            ModelKind::Logistic | ModelKind::LinearSvm => {
                if !(self.learning_rate > T::zero()) || !self.learning_rate.is_finite() {
                    return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
                }
                if self.l2_penalty < T::zero() {
                    return fail(format!("l2_penalty must be >= 0, got {}", self.l2_penalty));
                }
                if self.epochs == 0 || self.batch_size == 0 {
                    return fail("epochs and batch_size must be >= 1".into());
                }
            }
            ModelKind::DecisionTree | ModelKind::RandomForest | ModelKind::GradientBoosting => {
                if self.max_depth > MAX_TREE_DEPTH {
                    return fail(format!("max_depth must be <= {MAX_TREE_DEPTH}"));
                }
                if self.min_samples_leaf == 0 {
                    return fail("min_samples_leaf must be >= 1".into());
                }
                if kind == ModelKind::RandomForest {
                    if self.n_trees == 0 {
                        return fail("n_trees must be >= 1".into());
                    }
                    if let Some(r) = self.feature_subsample_ratio {
                        if !(r > T::zero() && r <= T::one()) {
                            return fail(format!("feature_subsample_ratio must lie in (0, 1], got {r}"));
                        }
                    }
                }
                if kind == ModelKind::GradientBoosting
                    && !(self.learning_rate > T::zero() && self.learning_rate <= T::one())
                {
                    return fail(format!("learning_rate must lie in (0, 1], got {}", self.learning_rate));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Estimator<T> {
    Linear(LinearModel<T>),
    Tree { root: TreeNode<T> },
    Ensemble(Ensemble<T>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel<T> {
    pub kind: ModelKind,
    pub hyperparameters: TrainConfig<T>,
    pub dimension: usize,
    /// Scores at or above the threshold classify as spam.
    pub threshold: T,
    pub estimator: Estimator<T>,
}

const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDocument<T> {
    version: u32,
    provenance: String,
    #[serde(flatten)]
    model: TrainedModel<T>,
}

impl<T: Scalar> TrainedModel<T> {
    pub(crate) fn new(kind: ModelKind, config: &TrainConfig<T>, dimension: usize, estimator: Estimator<T>) -> Self {
        TrainedModel {
            kind,
            hyperparameters: *config,
            dimension,
            threshold: T::of(0.5),
            estimator,
        }
    }

    /// Spam score of one row.
    pub fn predict(&self, row: &SparseVector<T>) -> Result<T> {
        if row.dimension() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: row.dimension(),
            });
        }
        Ok(match &self.estimator {
            Estimator::Linear(m) => m.score(row),
            Estimator::Tree { root } => root.predict(row),
            Estimator::Ensemble(e) => e.predict(row),
        })
    }

    pub fn classify(&self, row: &SparseVector<T>) -> Result<bool> {
        self.predict(row).map(|s| s >= self.threshold)
    }

    /// Scores every row of a matrix, in parallel.
    pub fn predict_matrix(&self, matrix: &FeatureMatrix<T>) -> Result<Vec<T>> {
        if matrix.dimension() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                found: matrix.dimension(),
            });
        }
        matrix.rows.par_iter().map(|r| self.predict(r)).collect()
    }

    /// Fraction of rows whose thresholded prediction equals the label.
    pub fn accuracy(&self, matrix: &FeatureMatrix<T>) -> Result<f64> {
        let scores = self.predict_matrix(matrix)?;
        let correct = scores
            .iter()
            .zip(&matrix.labels)
            .filter(|(&s, &l)| (s >= self.threshold) == l)
            .count();
        Ok(correct as f64 / matrix.n_rows().max(1) as f64)
    }

    /// Versioned JSON document; `provenance` is stored verbatim (e.g. a config digest).
    pub fn to_json(&self, provenance: &str) -> String {
        serde_json::to_string(&ModelDocument {
            version: MODEL_FORMAT_VERSION,
            provenance: provenance.to_string(),
            model: self.clone(),
        })
        .expect("model serialization cannot fail")
    }

    /// Parses a model document, returning the model and its provenance string.
    pub fn from_json(path: &Path, text: &str) -> Result<(Self, String)> {
        #[derive(Deserialize)]
        struct Version {
            version: u32,
        }
        let v: Version = serde_json::from_str(text).map_err(|e| Error::json(path, e))?;
        if v.version != MODEL_FORMAT_VERSION {
            return Err(Error::ArtifactVersion {
                path: path.into(),
                found: v.version,
            });
        }
        let doc: ModelDocument<T> = serde_json::from_str(text).map_err(|e| Error::json(path, e))?;
        Ok((doc.model, doc.provenance))
    }
}

/// Targets as 0/1 scalars, rejecting single-class input.
pub(crate) fn binary_targets<T: Scalar>(matrix: &FeatureMatrix<T>) -> Result<Vec<T>> {
    if matrix.n_rows() == 0 {
        return Err(Error::EmptyInput("training matrix has no rows"));
    }
    let pos = matrix.n_positive();
    if pos == 0 || pos == matrix.n_rows() {
        return Err(Error::SingleClass);
    }
    Ok(matrix
        .labels
        .iter()
        .map(|&l| if l { T::one() } else { T::zero() })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(score: f64) -> TrainedModel<f64> {
        TrainedModel::new(
            ModelKind::DecisionTree,
            &TrainConfig::decision_tree(),
            2,
            Estimator::Tree {
                root: TreeNode::Leaf { score },
            },
        )
    }

    #[test]
    fn single_leaf_predicts_constant() {
        let m = leaf(0.8);
        assert_eq!(m.predict(&SparseVector::from_dense(&[3.0, -1.0])).unwrap(), 0.8);
        assert_eq!(m.predict(&SparseVector::zeros(2)).unwrap(), 0.8);
    }

    #[test]
    fn predict_rejects_dimension_mismatch() {
        assert!(matches!(
            leaf(0.5).predict(&SparseVector::zeros(3)),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn threshold_is_inclusive_and_monotone() {
        let mut m = leaf(0.5);
        let row = SparseVector::zeros(2);
        assert!(m.classify(&row).unwrap());
        m.threshold = 0.5000001;
        assert!(!m.classify(&row).unwrap());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("lr".parse::<ModelKind>().unwrap(), ModelKind::Logistic);
        assert_eq!("RF".parse::<ModelKind>().unwrap(), ModelKind::RandomForest);
        assert!("knn".parse::<ModelKind>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::<f64>::logistic();
        assert!(c.validate(ModelKind::Logistic).is_ok());
        c.learning_rate = 0.0;
        assert!(c.validate(ModelKind::Logistic).is_err());
        let mut rf = TrainConfig::<f64>::random_forest();
        rf.feature_subsample_ratio = Some(1.5);
        assert!(rf.validate(ModelKind::RandomForest).is_err());
        let mut gb = TrainConfig::<f64>::gradient_boosting();
        gb.n_trees = 0;
        assert!(gb.validate(ModelKind::GradientBoosting).is_ok());
        gb.max_depth = 61;
        assert!(gb.validate(ModelKind::GradientBoosting).is_err());
    }

    #[test]
    fn documented_defaults() {
        let lr = TrainConfig::<f64>::logistic();
        assert_eq!(
            (lr.learning_rate, lr.epochs, lr.l2_penalty, lr.batch_size),
            (0.1, 30, 1e-4, 256)
        );
        let svm = TrainConfig::<f64>::linear_svm();
        assert_eq!((svm.learning_rate, svm.epochs, svm.l2_penalty), (0.05, 30, 1e-4));
        let dt = TrainConfig::<f64>::decision_tree();
        assert_eq!((dt.max_depth, dt.min_samples_leaf), (12, 5));
        let rf = TrainConfig::<f64>::random_forest();
        assert_eq!((rf.n_trees, rf.max_depth, rf.feature_subsample_ratio), (100, 16, None));
        let gb = TrainConfig::<f64>::gradient_boosting();
        assert_eq!((gb.n_trees, gb.learning_rate, gb.max_depth), (100, 0.1, 4));
    }

    #[test]
    fn json_round_trip_and_version_check() {
        let m = leaf(0.25);
        let text = m.to_json("abc");
        let (back, prov) = TrainedModel::<f64>::from_json(Path::new("m.json"), &text).unwrap();
        assert_eq!(back, m);
        assert_eq!(prov, "abc");
        let bad = text.replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(
            TrainedModel::<f64>::from_json(Path::new("m.json"), &bad),
            Err(Error::ArtifactVersion { found: 2, .. })
        ));
    }
}
