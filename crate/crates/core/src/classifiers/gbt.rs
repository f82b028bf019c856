//! Gradient-boosted trees with second-order leaf values and shrinkage.
//!
//! Two classes use one logistic margin; more classes use one margin per class
//! under a softmax.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{fit_gradient_tree, GradientTreeParams, Tree};
use crate::data::FeatureMatrix;
use crate::par::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub subsample: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: Vec<f64>,
    /// One tree per margin per stage.
    pub stages: Vec<Vec<Tree>>,
    pub learning_rate: f64,
    pub class_count: usize,
}

const PROB_FLOOR: f64 = 1e-12;
const HESS_FLOOR: f64 = 1e-16;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let top = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - top).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl GbtModel {
    fn margins(&self) -> usize {
        if self.class_count == 2 {
            1
        } else {
            self.class_count
        }
    }

    pub fn fit(x: &FeatureMatrix, y: &[usize], class_count: usize, params: &GbtParams, seed: u64) -> Self {
        Self::fit_with_loss(x, y, class_count, params, seed).0
    }

    /// Also returns the mean training log-loss after each stage.
    pub fn fit_with_loss(
        x: &FeatureMatrix,
        y: &[usize],
        class_count: usize,
        params: &GbtParams,
        seed: u64,
    ) -> (Self, Vec<f64>) {
        let n = x.rows();
        let mut prior = vec![0.0; class_count];
        for &c in y {
            prior[c] += 1.0 / n as f64;
        }
        let base_score = if class_count == 2 {
            let p = prior[1].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            vec![(p / (1.0 - p)).ln()]
        } else {
            prior.iter().map(|p| p.max(PROB_FLOOR).ln()).collect()
        };
        let mut model = GbtModel { base_score, stages: Vec::new(), learning_rate: params.learning_rate, class_count };
        let m = model.margins();
        let mut margin: Vec<Vec<f64>> = vec![model.base_score.clone(); n];
        let tree_params =
            GradientTreeParams { max_depth: params.max_depth, lambda: params.lambda, min_child_weight: params.min_child_weight };
        let take = ((params.subsample * n as f64).round() as usize).clamp(1, n);
        let mut losses = Vec::with_capacity(params.n_estimators);
        for stage in 0..params.n_estimators {
            let rows: Vec<usize> = if take == n {
                (0..n).collect()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stage as u64));
                let mut r = sample(&mut rng, n, take).into_vec();
                r.sort_unstable();
                r
            };
            let probs: Vec<Vec<f64>> = margin.iter().map(|z| model.link(z)).collect();
            let mut trees = Vec::with_capacity(m);
            for c in 0..m {
                let target = if m == 1 { 1 } else { c };
                let p_index = if m == 1 { 1 } else { c };
                let mut g = vec![0.0; n];
                let mut h = vec![0.0; n];
                for i in 0..n {
                    let p = probs[i][p_index];
                    g[i] = p - if y[i] == target { 1.0 } else { 0.0 };
                    h[i] = (p * (1.0 - p)).max(HESS_FLOOR);
                }
                trees.push(fit_gradient_tree(x, &rows, &g, &h, &tree_params));
            }
            for (i, z) in margin.iter_mut().enumerate() {
                for (c, t) in trees.iter().enumerate() {
                    z[c] += params.learning_rate * t.leaf_value(x.row(i))[0];
                }
            }
            model.stages.push(trees);
            let loss = margin
                .iter()
                .zip(y)
                .map(|(z, &c)| -model.link(z)[c].max(PROB_FLOOR).ln())
                .sum::<f64>()
                / n as f64;
            losses.push(loss);
        }
        (model, losses)
    }

    fn link(&self, z: &[f64]) -> Vec<f64> {
        if self.class_count == 2 {
            let p = sigmoid(z[0]);
            vec![1.0 - p, p]
        } else {
            softmax(z)
        }
    }

    pub fn margin_row(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.base_score.clone();
        for stage in &self.stages {
            for (c, t) in stage.iter().enumerate() {
                z[c] += self.learning_rate * t.leaf_value(x)[0];
            }
        }
        z
    }

    pub fn predict_proba_row(&self, x: &[f64]) -> Vec<f64> {
        self.link(&self.margin_row(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::tree::argmax;

    fn params(n: usize, lr: f64) -> GbtParams {
        GbtParams { n_estimators: n, learning_rate: lr, max_depth: 3, subsample: 1.0, lambda: 1.0, min_child_weight: 1.0 }
    }

    fn three_class() -> (FeatureMatrix, Vec<usize>) {
        let rows: Vec<Vec<f64>> = (0..60).map(|i| vec![(i % 20) as f64 + (i / 20) as f64 * 30.0, (i % 3) as f64]).collect();
        let y = (0..60).map(|i| i / 20).collect();
        (FeatureMatrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn training_loss_does_not_increase() {
        let (x, y) = three_class();
        let (_, losses) = GbtModel::fit_with_loss(&x, &y, 3, &params(20, 0.1), 0);
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{losses:?}");
        }
    }

    #[test]
    fn vanishing_rate_predicts_majority() {
        let x = FeatureMatrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap();
        let y = vec![1, 1, 1, 0, 0];
        let m = GbtModel::fit(&x, &y, 2, &params(1, 1e-9), 0);
        for i in 0..5 {
            assert_eq!(argmax(&m.predict_proba_row(x.row(i))), 1);
        }
    }

    #[test]
    fn separates_three_blocks() {
        let (x, y) = three_class();
        let m = GbtModel::fit(&x, &y, 3, &params(30, 0.3), 0);
        let acc = (0..60).filter(|&i| argmax(&m.predict_proba_row(x.row(i))) == y[i]).count();
        assert_eq!(acc, 60);
    }

    #[test]
    fn subsampling_is_seeded() {
        let (x, y) = three_class();
        let mut p = params(5, 0.1);
        p.subsample = 0.5;
        assert_eq!(GbtModel::fit(&x, &y, 3, &p, 4), GbtModel::fit(&x, &y, 3, &p, 4));
    }
}
