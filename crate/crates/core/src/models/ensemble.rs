//! Random forest (bagged CART) and gradient boosting on logistic loss.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow_tree, grow_tree_presorted, sorted_entries, Criterion, GrowParams, TreeNode};
use super::{binary_targets, Estimator, ModelKind, TrainConfig, TrainedModel};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::num::Scalar;
use crate::rng;
use crate::sparse::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleKind {
    Bagged,
    Boosted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble<T> {
    pub kind: EnsembleKind,
    pub trees: Vec<TreeNode<T>>,
    /// Shrinkage applied to every boosted tree.
    pub learning_rate: T,
    /// Initial log-odds of a boosted model.
    pub base_score: T,
}

impl<T: Scalar> Ensemble<T> {
    /// Boosted additive score before the sigmoid.
    pub fn raw_score(&self, row: &SparseVector<T>) -> T {
        let sum: T = self.trees.iter().map(|t| t.predict(row)).sum();
        match self.kind {
            EnsembleKind::Bagged => sum / T::count(self.trees.len()),
            EnsembleKind::Boosted => self.base_score + self.learning_rate * sum,
        }
    }

    pub fn predict(&self, row: &SparseVector<T>) -> T {
        match self.kind {
            EnsembleKind::Bagged => self.raw_score(row),
            EnsembleKind::Boosted => self.raw_score(row).sigmoid(),
        }
    }
}

const BOOTSTRAP_STREAM: u64 = 0xb007;

/// Number of columns per split: `ceil(ratio * V)`, defaulting to `sqrt(V) / V`.
pub fn features_per_split<T: Scalar>(ratio: Option<T>, dimension: usize) -> usize {
    let d = T::count(dimension);
    let ratio = ratio.unwrap_or_else(|| d.sqrt() / d);
    ((ratio * d).ceil().to_usize().unwrap_or(dimension)).clamp(1, dimension.max(1))
}

/// Bagged CART classifiers; the score is the mean of the trees' leaf scores.
///
/// Tree `t` draws its bootstrap sample and per-node columns from streams keyed
/// by `(seed, t)`, so trees are trained in parallel without affecting results.
pub fn train_random_forest<T: Scalar>(matrix: &FeatureMatrix<T>, config: &TrainConfig<T>) -> Result<TrainedModel<T>> {
    config.validate(ModelKind::RandomForest)?;
    let targets = binary_targets(matrix)?;
    let n = matrix.n_rows();
    let dim = matrix.dimension();
    let per_node = features_per_split(config.feature_subsample_ratio, dim);
    let trees: Vec<TreeNode<T>> = (0..config.n_trees as u64)
        .into_par_iter()
        .map(|t| {
            let samples: Vec<usize> = if config.bootstrap {
                let mut r = rng::stream(config.seed, &[BOOTSTRAP_STREAM, t]);
                let mut s: Vec<usize> = (0..n).map(|_| r.gen_range(0..n)).collect();
                s.sort_unstable();
                s
            } else {
                (0..n).collect()
            };
            grow_tree(
                &matrix.rows,
                &targets,
                dim,
                samples,
                GrowParams {
                    max_depth: config.max_depth,
                    min_samples_leaf: config.min_samples_leaf,
                    criterion: Criterion::Gini,
                    features_per_node: (per_node < dim).then_some(per_node),
                    seed: config.seed,
                    tree_index: t,
                },
            )
        })
        .collect();
    Ok(TrainedModel::new(
        ModelKind::RandomForest,
        config,
        dim,
        Estimator::Ensemble(Ensemble {
            kind: EnsembleKind::Bagged,
            trees,
            learning_rate: T::one(),
            base_score: T::zero(),
        }),
    ))
}

/// Mean logistic loss of additive scores against 0/1 targets.
pub fn log_loss<T: Scalar>(scores: &[T], targets: &[T]) -> T {
    let total: T = scores
        .iter()
        .zip(targets)
        .map(|(&f, &y)| f.max(T::zero()) + (-f.abs()).exp().ln_1p() - y * f)
        .sum();
    total / T::count(scores.len())
}

/// Per-round training log-loss, recorded alongside a boosted model.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostingTrace<T> {
    /// Loss of the base model followed by the loss after each round.
    pub round_losses: Vec<T>,
}

/// Gradient boosting of regression trees on logistic loss.
///
/// Starts from the log-odds of the training spam rate; each round fits a
/// variance-reduction tree to the residuals `y - p` (leaf value: mean
/// residual) and adds it with shrinkage `learning_rate`.
pub fn train_gradient_boosting_traced<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    config: &TrainConfig<T>,
) -> Result<(TrainedModel<T>, BoostingTrace<T>)> {
    config.validate(ModelKind::GradientBoosting)?;
    let targets = binary_targets(matrix)?;
    let n = matrix.n_rows();
    let rate = T::count(matrix.n_positive()) / T::count(n);
    let base_score = (rate / (T::one() - rate)).ln();
    if !base_score.is_finite() {
        return Err(Error::Divergence {
            model: ModelKind::GradientBoosting.key().into(),
            detail: "base log-odds is not finite".into(),
        });
    }
    let mut scores = vec![base_score; n];
    let mut residuals = vec![T::zero(); n];
    let mut trace = BoostingTrace {
        round_losses: vec![log_loss(&scores, &targets)],
    };
    let mut trees = Vec::with_capacity(config.n_trees);
    let all: Vec<usize> = (0..n).collect();
    let root_entries = if config.n_trees > 0 {
        sorted_entries(&matrix.rows, &all)
    } else {
        Vec::new()
    };
    for round in 0..config.n_trees {
        residuals
            .par_iter_mut()
            .zip(scores.par_iter().zip(targets.par_iter()))
            .for_each(|(r, (&f, &y))| *r = y - f.sigmoid());
        let tree = grow_tree_presorted(
            &matrix.rows,
            &residuals,
            matrix.dimension(),
            all.clone(),
            root_entries.clone(),
            GrowParams {
                max_depth: config.max_depth,
                min_samples_leaf: config.min_samples_leaf,
                criterion: Criterion::Variance,
                features_per_node: None,
                seed: config.seed,
                tree_index: round as u64,
            },
        );
        scores
            .par_iter_mut()
            .zip(matrix.rows.par_iter())
            .for_each(|(f, row)| *f += config.learning_rate * tree.predict(row));
        let loss = log_loss(&scores, &targets);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                model: ModelKind::GradientBoosting.key().into(),
                detail: format!("non-finite loss after round {}", round + 1),
            });
        }
        trace.round_losses.push(loss);
        trees.push(tree);
    }
    let model = TrainedModel::new(
        ModelKind::GradientBoosting,
        config,
        matrix.dimension(),
        Estimator::Ensemble(Ensemble {
            kind: EnsembleKind::Boosted,
            trees,
            learning_rate: config.learning_rate,
            base_score,
        }),
    );
    Ok((model, trace))
}

pub fn train_gradient_boosting<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    config: &TrainConfig<T>,
) -> Result<TrainedModel<T>> {
    train_gradient_boosting_traced(matrix, config).map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::train_decision_tree;

    fn leaves(scores: &[f64]) -> Ensemble<f64> {
        Ensemble {
            kind: EnsembleKind::Bagged,
            trees: scores.iter().map(|&score| TreeNode::Leaf { score }).collect(),
            learning_rate: 1.0,
            base_score: 0.0,
        }
    }

    #[test]
    fn forest_averages_leaves() {
        let e = leaves(&[0.2, 0.4, 0.6]);
        assert!((e.predict(&SparseVector::zeros(1)) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn identical_trees_have_zero_spread() {
        let e = leaves(&[0.7; 5]);
        let row = SparseVector::zeros(1);
        let per_tree: Vec<f64> = e.trees.iter().map(|t| t.predict(&row)).collect();
        let mean = per_tree.iter().sum::<f64>() / 5.0;
        assert_eq!(per_tree.iter().map(|p| (p - mean).powi(2)).sum::<f64>(), 0.0);
    }

    #[test]
    fn feature_count_defaults_to_square_root() {
        assert_eq!(features_per_split::<f64>(None, 2004), 45);
        assert_eq!(features_per_split::<f64>(None, 1), 1);
        assert_eq!(features_per_split(Some(1.0), 7), 7);
        assert_eq!(features_per_split(Some(0.3), 10), 3);
    }

    fn noisy_1d(n: usize) -> FeatureMatrix<f64> {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, ((i * 7) % 5) as f64]).collect();
        let labels: Vec<bool> = (0..n).map(|i| i >= n / 2).collect();
        FeatureMatrix::from_dense(&rows, labels).unwrap()
    }

    #[test]
    fn degenerate_forest_is_a_tree() {
        let m = noisy_1d(40);
        let cfg = TrainConfig {
            n_trees: 1,
            bootstrap: false,
            feature_subsample_ratio: Some(1.0),
            max_depth: 4,
            min_samples_leaf: 2,
            ..TrainConfig::random_forest()
        };
        let forest = train_random_forest(&m, &cfg).unwrap();
        let tree = train_decision_tree(&m, &cfg).unwrap();
        assert_eq!(forest.predict_matrix(&m).unwrap(), tree.predict_matrix(&m).unwrap());
    }

    #[test]
    fn zero_rounds_predict_base_rate() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let labels: Vec<bool> = (0..10).map(|i| i < 3).collect();
        let m = FeatureMatrix::from_dense(&rows, labels).unwrap();
        let cfg = TrainConfig {
            n_trees: 0,
            ..TrainConfig::gradient_boosting()
        };
        let model = train_gradient_boosting(&m, &cfg).unwrap();
        for row in &m.rows {
            assert!((model.predict(row).unwrap() - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn balanced_base_score_is_zero() {
        let m = noisy_1d(10);
        let cfg = TrainConfig {
            n_trees: 0,
            ..TrainConfig::gradient_boosting()
        };
        let model = train_gradient_boosting(&m, &cfg).unwrap();
        match model.estimator {
            Estimator::Ensemble(e) => assert_eq!(e.base_score, 0.0),
            _ => unreachable!(),
        }
    }

    #[test]
    fn boosting_fits_a_threshold_in_ten_rounds() {
        let m = noisy_1d(30);
        let cfg = TrainConfig {
            n_trees: 10,
            ..TrainConfig::gradient_boosting()
        };
        let (model, trace) = train_gradient_boosting_traced(&m, &cfg).unwrap();
        assert_eq!(model.accuracy(&m).unwrap(), 1.0);
        assert!(trace.round_losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn forest_is_seed_deterministic_and_seed_sensitive() {
        let m = noisy_1d(60);
        let cfg = TrainConfig {
            n_trees: 8,
            ..TrainConfig::random_forest()
        };
        let a = train_random_forest(&m, &cfg).unwrap();
        assert_eq!(a, train_random_forest(&m, &cfg).unwrap());
        assert_ne!(a, train_random_forest(&m, &cfg.with_seed(1)).unwrap());
    }
}
