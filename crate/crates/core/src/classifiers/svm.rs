//! Linear SVM trained in the primal with stochastic subgradient steps.
//!
//! Objective: `λ/2 ‖w‖² + mean_i max(0, 1 − y_i (w·x_i + b))` with
//! `λ = 1 / (C n)`, which is the usual `½‖w‖² + C Σ hinge` divided by `C n`.
//! Step size at update `t` is `1 / (λ t)`. The bias step is scaled by the
//! mean squared row norm, which makes training exactly equivariant under a
//! rescaling of the features by `a` together with `C → C / a²`.
//!
//! The returned model is the best iterate seen at an epoch boundary, so the
//! recorded objective trace never increases.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::corpus::Label;
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            epochs: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmTrace {
    /// Objective at w = 0, b = 0.
    pub initial: f64,
    /// Objective of the kept model after each epoch.
    pub epochs: Vec<f64>,
}

impl SvmTrace {
    pub fn final_objective(&self) -> f64 {
        self.epochs.last().copied().unwrap_or(self.initial)
    }
}

fn margin_score(features: &FeatureMatrix, row: usize, weights: &[f64], bias: f64) -> f64 {
    features.dot(row, weights) + bias
}

/// `λ/2 ‖w‖² + mean hinge` for the given parameters.
pub fn svm_objective(features: &FeatureMatrix, labels: &[Label], weights: &[f64], bias: f64, c: f64) -> f64 {
    let n = labels.len() as f64;
    let lambda = 1.0 / (c * n);
    let reg = 0.5 * lambda * weights.iter().map(|w| w * w).sum::<f64>();
    let hinge: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, y)| (1.0 - y.sign() * margin_score(features, i, weights, bias)).max(0.0))
        .sum();
    reg + hinge / n
}

fn check(features: &FeatureMatrix, expected_rows: usize, columns: usize) -> Result<(), ClassifierError> {
    if features.len() != expected_rows {
        return Err(ClassifierError::Dimension(format!(
            "{} feature rows for {expected_rows} labels",
            features.len()
        )));
    }
    if features.columns != columns {
        return Err(ClassifierError::Dimension(format!(
            "{} feature columns, model has {columns}",
            features.columns
        )));
    }
    Ok(())
}

pub fn svm_train(
    features: &FeatureMatrix,
    labels: &[Label],
    config: &SvmConfig,
) -> Result<(LinearModel, SvmTrace), ClassifierError> {
    check(features, labels.len(), features.columns)?;
    if !(config.c > 0.0 && config.c.is_finite()) {
        return Err(ClassifierError::Config(format!("C must be positive, got {}", config.c)));
    }
    for class in Label::ALL {
        if !labels.contains(&class) {
            return Err(ClassifierError::SingleClass(class));
        }
    }
    let n = labels.len();
    let lambda = 1.0 / (config.c * n as f64);
    let mean_sq_norm = features
        .rows
        .iter()
        .map(|r| r.iter().map(|(_, v)| v * v).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    let bias_scale = if mean_sq_norm > 0.0 { mean_sq_norm } else { 1.0 };

    let mut w = vec![0.0; features.columns];
    let mut b = 0.0;
    let initial = svm_objective(features, labels, &w, b, config.c);
    let mut best = (initial, w.clone(), b);
    let mut trace = SvmTrace {
        initial,
        epochs: Vec::with_capacity(config.epochs),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0usize;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let y = labels[i].sign();
            let margin = y * margin_score(features, i, &w, b);
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|x| *x *= shrink);
            if margin < 1.0 {
                for &(j, v) in &features.rows[i] {
                    w[j] += eta * y * v;
                }
                b += eta * bias_scale * y;
            }
        }
        let objective = svm_objective(features, labels, &w, b, config.c);
        if !objective.is_finite() {
            return Err(ClassifierError::Diverged(format!("SVM objective became {objective}")));
        }
        if objective < best.0 {
            best = (objective, w.clone(), b);
        }
        trace.epochs.push(best.0);
    }
    let (_, weights, bias) = best;
    Ok((
        LinearModel {
            weights,
            bias,
            c: config.c,
            seed: config.seed,
        },
        trace,
    ))
}

/// Label and decision value per row. A decision value of exactly 0 maps to
/// NotHateful.
pub fn svm_predict(model: &LinearModel, features: &FeatureMatrix) -> Result<Vec<(Label, f64)>, ClassifierError> {
    check(features, features.len(), model.weights.len())?;
    Ok((0..features.len())
        .map(|i| {
            let s = margin_score(features, i, &model.weights, model.bias);
            (if s > 0.0 { Label::Hateful } else { Label::NotHateful }, s)
        })
        .collect())
}
