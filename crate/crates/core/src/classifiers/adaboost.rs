//! Multi-class AdaBoost (SAMME) over depth-1 trees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{fit_classification_tree, CartParams, FeatureSubset, Tree};
use crate::data::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub stump: Tree,
    pub weight: f64,
    pub weighted_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostModel {
    pub stages: Vec<Stage>,
    pub class_count: usize,
}

/// Sample weights a round was fitted under, and what it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub sample_weights: Vec<f64>,
    pub predictions: Vec<usize>,
    pub weighted_error: f64,
}

fn stump_params() -> CartParams {
    CartParams { max_depth: Some(1), max_features: FeatureSubset::All, ..Default::default() }
}

impl AdaBoostModel {
    pub fn fit(x: &FeatureMatrix, y: &[usize], class_count: usize, n_estimators: usize, learning_rate: f64, seed: u64) -> Self {
        Self::fit_traced(x, y, class_count, n_estimators, learning_rate, seed).0
    }

    pub fn fit_traced(
        x: &FeatureMatrix,
        y: &[usize],
        class_count: usize,
        n_estimators: usize,
        learning_rate: f64,
        seed: u64,
    ) -> (Self, Vec<Round>) {
        let n = x.rows();
        let k = class_count as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Log-domain weights avoid overflow with large stage weights.
        let mut log_w = vec![0.0f64; n];
        let mut stages = Vec::new();
        let mut trace = Vec::new();
        for _ in 0..n_estimators {
            let top = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut w: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);

            let stump = fit_classification_tree(x, y, class_count, &w, &stump_params(), &mut rng);
            let predictions: Vec<usize> = (0..n).map(|i| stump.predict_class(x.row(i))).collect();
            let err: f64 = (0..n).filter(|&i| predictions[i] != y[i]).map(|i| w[i]).sum();
            trace.push(Round { sample_weights: w, predictions: predictions.clone(), weighted_error: err });

            if err <= 0.0 {
                stages.push(Stage { stump, weight: 1.0, weighted_error: err });
                break;
            }
            if err >= 1.0 - 1.0 / k {
                // No better than chance; keep one stump so the model can predict.
                if stages.is_empty() {
                    stages.push(Stage { stump, weight: 1.0, weighted_error: err });
                }
                break;
            }
            let alpha = learning_rate * (((1.0 - err) / err).ln() + (k - 1.0).ln());
            for i in 0..n {
                if predictions[i] != y[i] {
                    log_w[i] += alpha;
                }
            }
            stages.push(Stage { stump, weight: alpha, weighted_error: err });
        }
        (AdaBoostModel { stages, class_count }, trace)
    }

    /// Stage-weight votes normalised to sum to one.
    pub fn predict_proba_row(&self, x: &[f64]) -> Vec<f64> {
        let mut votes = vec![0.0; self.class_count];
        for s in &self.stages {
            votes[s.stump.predict_class(x)] += s.weight;
        }
        let total: f64 = votes.iter().sum();
        if total > 0.0 {
            votes.iter_mut().for_each(|v| *v /= total);
        }
        votes
    }
}
