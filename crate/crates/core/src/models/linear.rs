//! Logistic regression and linear SVM trained by mini-batch (sub)gradient descent.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{binary_targets, Estimator, ModelKind, TrainConfig, TrainedModel};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::num::Scalar;
use crate::rng;
use crate::sparse::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearKind {
    Logistic,
    Hinge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel<T> {
    pub kind: LinearKind,
    pub weights: Vec<T>,
    pub bias: T,
}

impl<T: Scalar> LinearModel<T> {
    pub fn margin(&self, row: &SparseVector<T>) -> T {
        row.dot(&self.weights) + self.bias
    }

    /// Logistic squashing of the margin. For the hinge model this is an
    /// uncalibrated score, adequate for thresholding at 0.5.
    pub fn score(&self, row: &SparseVector<T>) -> T {
        self.margin(row).sigmoid()
    }
}

/// L2-regularized empirical risk: mean per-sample loss plus `l2 / 2 * |w|^2`.
/// The bias is not regularized. Targets are 0/1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective<T> {
    pub kind: LinearKind,
    pub l2_penalty: T,
}

/// `ln(1 + e^x)` without overflow.
fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<T: Scalar> Objective<T> {
    pub fn sample_loss(&self, margin: T, target: T) -> T {
        match self.kind {
            LinearKind::Logistic => softplus(margin) - target * margin,
            LinearKind::Hinge => {
                let sign = T::of(2.0) * target - T::one();
                (T::one() - sign * margin).max(T::zero())
            }
        }
    }

    /// d(sample_loss)/d(margin); the hinge uses the zero sub-gradient at the kink.
    pub fn sample_derivative(&self, margin: T, target: T) -> T {
        match self.kind {
            LinearKind::Logistic => margin.sigmoid() - target,
            LinearKind::Hinge => {
                let sign = T::of(2.0) * target - T::one();
                if sign * margin < T::one() {
                    -sign
                } else {
                    T::zero()
                }
            }
        }
    }

    fn penalty(&self, weights: &[T]) -> T {
        T::of(0.5) * self.l2_penalty * weights.iter().map(|&w| w * w).sum::<T>()
    }

    pub fn loss(&self, matrix: &FeatureMatrix<T>, targets: &[T], weights: &[T], bias: T) -> T {
        let data: T = matrix
            .rows
            .iter()
            .zip(targets)
            .map(|(row, &y)| self.sample_loss(row.dot(weights) + bias, y))
            .sum();
        data / T::count(matrix.n_rows()) + self.penalty(weights)
    }

    /// Gradient of the objective restricted to `batch` (weights, bias).
    pub fn gradient(
        &self,
        matrix: &FeatureMatrix<T>,
        targets: &[T],
        weights: &[T],
        bias: T,
        batch: &[usize],
    ) -> (Vec<T>, T) {
        let scale = T::one() / T::count(batch.len());
        let mut grad: Vec<T> = weights.iter().map(|&w| self.l2_penalty * w).collect();
        let mut grad_bias = T::zero();
        for &i in batch {
            let row = &matrix.rows[i];
            let d = self.sample_derivative(row.dot(weights) + bias, targets[i]) * scale;
            for (j, v) in row.iter() {
                grad[j] += d * v;
            }
            grad_bias += d;
        }
        (grad, grad_bias)
    }
}

/// One descent step on `batch`, touching only the batch's nonzero columns
/// beyond the dense weight decay.
fn step<T: Scalar>(
    objective: &Objective<T>,
    matrix: &FeatureMatrix<T>,
    targets: &[T],
    model: &mut LinearModel<T>,
    batch: &[usize],
    learning_rate: T,
    derivatives: &mut Vec<T>,
) {
    let scale = learning_rate / T::count(batch.len());
    derivatives.clear();
    derivatives.extend(
        batch
            .iter()
            .map(|&i| objective.sample_derivative(model.margin(&matrix.rows[i]), targets[i])),
    );
    let decay = T::one() - learning_rate * objective.l2_penalty;
    if decay != T::one() {
        model.weights.iter_mut().for_each(|w| *w *= decay);
    }
    let mut bias_step = T::zero();
    for (&i, &d) in batch.iter().zip(derivatives.iter()) {
        for (j, v) in matrix.rows[i].iter() {
            model.weights[j] -= scale * d * v;
        }
        bias_step += d;
    }
    model.bias -= scale * bias_step;
}

/// Full-data objective value after each epoch, recorded during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace<T> {
    pub epoch_losses: Vec<T>,
}

fn train_linear<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    config: &TrainConfig<T>,
    kind: ModelKind,
    linear_kind: LinearKind,
) -> Result<(TrainedModel<T>, TrainingTrace<T>)> {
    config.validate(kind)?;
    let targets = binary_targets(matrix)?;
    let objective = Objective {
        kind: linear_kind,
        l2_penalty: config.l2_penalty,
    };
    let mut model = LinearModel {
        kind: linear_kind,
        weights: vec![T::zero(); matrix.dimension()],
        bias: T::zero(),
    };
    let mut order: Vec<usize> = (0..matrix.n_rows()).collect();
    let mut derivatives = Vec::with_capacity(config.batch_size);
    let mut trace = TrainingTrace {
        epoch_losses: Vec::with_capacity(config.epochs),
    };
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng::stream(config.seed, &[epoch as u64]));
        for batch in order.chunks(config.batch_size) {
            step(
                &objective,
                matrix,
                &targets,
                &mut model,
                batch,
                config.learning_rate,
                &mut derivatives,
            );
        }
        let loss = objective.loss(matrix, &targets, &model.weights, model.bias);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                model: kind.key().to_string(),
                detail: format!("non-finite loss after epoch {}", epoch + 1),
            });
        }
        trace.epoch_losses.push(loss);
    }
    Ok((
        TrainedModel::new(kind, config, matrix.dimension(), Estimator::Linear(model)),
        trace,
    ))
}

/// L2-regularized logistic regression.
pub fn train_logistic<T: Scalar>(matrix: &FeatureMatrix<T>, config: &TrainConfig<T>) -> Result<TrainedModel<T>> {
    train_linear(matrix, config, ModelKind::Logistic, LinearKind::Logistic).map(|(m, _)| m)
}

/// L2-regularized hinge-loss linear SVM; scores are the squashed margin.
pub fn train_linear_svm<T: Scalar>(matrix: &FeatureMatrix<T>, config: &TrainConfig<T>) -> Result<TrainedModel<T>> {
    train_linear(matrix, config, ModelKind::LinearSvm, LinearKind::Hinge).map(|(m, _)| m)
}

/// Like [`train_logistic`] / [`train_linear_svm`], also returning per-epoch losses.
pub fn train_linear_traced<T: Scalar>(
    matrix: &FeatureMatrix<T>,
    config: &TrainConfig<T>,
    kind: LinearKind,
) -> Result<(TrainedModel<T>, TrainingTrace<T>)> {
    match kind {
        LinearKind::Logistic => train_linear(matrix, config, ModelKind::Logistic, kind),
        LinearKind::Hinge => train_linear(matrix, config, ModelKind::LinearSvm, kind),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn matrix(rows: &[Vec<f64>], labels: &[bool]) -> FeatureMatrix<f64> {
        FeatureMatrix::from_dense(rows, labels.to_vec()).unwrap()
    }

    fn linear(model: &TrainedModel<f64>) -> &LinearModel<f64> {
        match &model.estimator {
            Estimator::Linear(m) => m,
            _ => unreachable!(),
        }
    }

    #[test]
    fn zero_features_balanced_labels_stay_at_half() {
        let m = matrix(&vec![vec![0.0, 0.0]; 4], &[true, false, true, false]);
        let model = train_logistic(&m, &TrainConfig::logistic()).unwrap();
        assert!(linear(&model).bias.abs() < 1e-12);
        assert!((model.predict(&SparseVector::zeros(2)).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_model_scores_half() {
        let m = LinearModel {
            kind: LinearKind::Hinge,
            weights: vec![0.0; 3],
            bias: 0.0,
        };
        assert_eq!(m.score(&SparseVector::from_dense(&[1.0, 2.0, 3.0])), 0.5);
    }

    #[test]
    fn svm_separates_two_points() {
        let m = matrix(&[vec![1.0], vec![-1.0]], &[true, false]);
        let model = train_linear_svm(&m, &TrainConfig::linear_svm()).unwrap();
        let lin = linear(&model);
        assert!(lin.margin(&m.rows[0]) > 0.0);
        assert!(lin.margin(&m.rows[1]) < 0.0);
    }

    #[test]
    fn hinge_has_no_gradient_beyond_margin() {
        let obj = Objective {
            kind: LinearKind::Hinge,
            l2_penalty: 0.0,
        };
        assert_eq!(obj.sample_derivative(1.5, 1.0), 0.0);
        assert_eq!(obj.sample_derivative(-1.5, 0.0), 0.0);
        assert_eq!(obj.sample_derivative(0.5, 1.0), -1.0);
        assert_eq!(obj.sample_loss(1.5, 1.0), 0.0);
    }

    #[test]
    fn single_class_is_rejected() {
        let m = matrix(&[vec![1.0], vec![2.0]], &[true, true]);
        assert!(matches!(
            train_logistic(&m, &TrainConfig::logistic()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn blowup_is_reported_as_divergence() {
        let m = matrix(&[vec![1e300], vec![-1e300]], &[true, false]);
        let cfg = TrainConfig {
            learning_rate: 1e10,
            ..TrainConfig::logistic()
        };
        assert!(matches!(train_logistic(&m, &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn sparse_step_equals_dense_gradient_step() {
        let mut r = rng::stream(3, &[]);
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| {
                (0..5)
                    .map(|_| if r.gen_bool(0.5) { r.gen_range(-1.0..1.0) } else { 0.0 })
                    .collect()
            })
            .collect();
        let labels: Vec<bool> = (0..12).map(|i| i % 3 == 0).collect();
        let m = matrix(&rows, &labels);
        let targets = binary_targets(&m).unwrap();
        for kind in [LinearKind::Logistic, LinearKind::Hinge] {
            let obj = Objective { kind, l2_penalty: 0.01 };
            let mut model = LinearModel {
                kind,
                weights: vec![0.3, -0.2, 0.1, 0.0, 0.5],
                bias: 0.1,
            };
            let batch: Vec<usize> = (0..12).collect();
            let (g, gb) = obj.gradient(&m, &targets, &model.weights, model.bias, &batch);
            let expected: Vec<f64> = model.weights.iter().zip(&g).map(|(w, g)| w - 0.1 * g).collect();
            let expected_bias = model.bias - 0.1 * gb;
            step(&obj, &m, &targets, &mut model, &batch, 0.1, &mut Vec::new());
            for (a, b) in model.weights.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-14);
            }
            assert!((model.bias - expected_bias).abs() < 1e-14);
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![(i % 7) as f64, (i % 5) as f64 - 2.0]).collect();
        let labels: Vec<bool> = (0..50).map(|i| i % 7 > 3).collect();
        let m = matrix(&rows, &labels);
        let cfg = TrainConfig {
            batch_size: 8,
            ..TrainConfig::logistic()
        };
        assert_eq!(train_logistic(&m, &cfg).unwrap(), train_logistic(&m, &cfg).unwrap());
        assert_ne!(
            train_logistic(&m, &cfg).unwrap(),
            train_logistic(&m, &cfg.with_seed(9)).unwrap()
        );
    }
}
