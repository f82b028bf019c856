//! Random forest: bootstrap-aggregated CART trees with majority voting.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{argmax, fit_classification_tree, CartParams, Tree};
use crate::data::FeatureMatrix;
use crate::error::Result;
use crate::par::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub bootstrap: bool,
    pub oob_score: bool,
    pub tree: CartParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub class_count: usize,
    /// Out-of-bag accuracy, when requested and every tree saw a bootstrap sample.
    pub oob_score: Option<f64>,
}

impl ForestModel {
    pub fn fit(x: &FeatureMatrix, y: &[usize], class_count: usize, params: &ForestParams, seed: u64) -> Result<Self> {
        let n = x.rows();
        let mut trees = Vec::with_capacity(params.n_estimators);
        let want_oob = params.oob_score && params.bootstrap;
        let mut in_bag = Vec::with_capacity(if want_oob { params.n_estimators } else { 0 });
        for t in 0..params.n_estimators {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
            let weights = if params.bootstrap {
                let mut counts = vec![0.0; n];
                for _ in 0..n {
                    counts[rng.gen_range(0..n)] += 1.0;
                }
                counts
            } else {
                vec![1.0; n]
            };
            trees.push(fit_classification_tree(x, y, class_count, &weights, &params.tree, &mut rng));
            if want_oob {
                in_bag.push(weights);
            }
        }
        let mut model = ForestModel { trees, class_count, oob_score: None };
        if want_oob {
            let mut correct = 0usize;
            let mut scored = 0usize;
            for i in 0..n {
                let mut votes = vec![0.0; class_count];
                let mut any = false;
                for (tree, w) in model.trees.iter().zip(&in_bag) {
                    if w[i] == 0.0 {
                        votes[tree.predict_class(x.row(i))] += 1.0;
                        any = true;
                    }
                }
                if any {
                    scored += 1;
                    correct += usize::from(argmax(&votes) == y[i]);
                }
            }
            model.oob_score = (scored > 0).then(|| correct as f64 / scored as f64);
        }
        Ok(model)
    }

    /// Share of trees voting for each class.
    pub fn predict_proba_row(&self, x: &[f64]) -> Vec<f64> {
        let mut votes = vec![0.0; self.class_count];
        for t in &self.trees {
            votes[t.predict_class(x)] += 1.0;
        }
        let n = self.trees.len() as f64;
        votes.iter_mut().for_each(|v| *v /= n);
        votes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::tree::{Criterion, FeatureSubset};

    fn params(n: usize, bootstrap: bool, oob: bool) -> ForestParams {
        ForestParams {
            n_estimators: n,
            bootstrap,
            oob_score: oob,
            tree: CartParams { max_features: FeatureSubset::Sqrt, criterion: Criterion::Gini, ..Default::default() },
        }
    }

    fn grid() -> (FeatureMatrix, Vec<usize>) {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let a = (i % 8) as f64;
            let b = (i / 8) as f64;
            rows.push(vec![a, b, (i * 7 % 5) as f64]);
            y.push(usize::from(a + b > 6.0));
        }
        (FeatureMatrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn oob_without_bootstrap_reports_nothing() {
        let (x, y) = grid();
        assert_eq!(ForestModel::fit(&x, &y, 2, &params(3, false, true), 0).unwrap().oob_score, None);
    }

    #[test]
    fn single_full_tree_without_bootstrap_memorises() {
        let (x, y) = grid();
        let mut p = params(1, false, false);
        p.tree.max_features = FeatureSubset::All;
        let m = ForestModel::fit(&x, &y, 2, &p, 3).unwrap();
        for i in 0..x.rows() {
            assert_eq!(argmax(&m.predict_proba_row(x.row(i))), y[i]);
        }
    }

    #[test]
    fn same_seed_same_forest() {
        let (x, y) = grid();
        let a = ForestModel::fit(&x, &y, 2, &params(10, true, true), 9).unwrap();
        let b = ForestModel::fit(&x, &y, 2, &params(10, true, true), 9).unwrap();
        assert_eq!(a, b);
        assert!(a.oob_score.unwrap() > 0.5);
    }
}
