//! k-nearest-neighbour voting with exact brute-force search.

use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Metric {
    Euclidean,
    Manhattan,
    Minkowski(f64),
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt(),
            Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Metric::Minkowski(p) if p == 1.0 => Metric::Manhattan.distance(a, b),
            Metric::Minkowski(p) if p == 2.0 => Metric::Euclidean.distance(a, b),
            Metric::Minkowski(p) => a.iter().zip(b).map(|(x, y)| (x - y).abs().powf(p)).sum::<f64>().powf(1.0 / p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Weighting {
    Uniform,
    Distance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub train: FeatureMatrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub k: usize,
    pub metric: Metric,
    pub weighting: Weighting,
}

impl KnnModel {
    pub fn fit(
        x: &FeatureMatrix,
        y: &[usize],
        class_count: usize,
        k: usize,
        metric: Metric,
        weighting: Weighting,
    ) -> Result<Self> {
        if k > x.rows() {
            return Err(Error::Fit(format!("n_neighbors={k} exceeds {} training rows", x.rows())));
        }
        Ok(Self { train: x.clone(), labels: y.to_vec(), class_count, k, metric, weighting })
    }

    /// The `k` nearest training rows as `(index, distance)`, nearest first;
    /// equal distances resolve to the lower index.
    pub fn neighbors(&self, q: &[f64]) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> =
            self.train.iter_rows().enumerate().map(|(i, r)| (i, self.metric.distance(r, q))).collect();
        let order = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if self.k < all.len() {
            all.select_nth_unstable_by(self.k - 1, order);
            all.truncate(self.k);
        }
        all.sort_by(order);
        all
    }

    pub fn predict_proba_row(&self, q: &[f64]) -> Vec<f64> {
        let nb = self.neighbors(q);
        let mut votes = vec![0.0; self.class_count];
        match self.weighting {
            Weighting::Uniform => nb.iter().for_each(|&(i, _)| votes[self.labels[i]] += 1.0),
            Weighting::Distance => {
                if nb.iter().any(|&(_, d)| d == 0.0) {
                    nb.iter().filter(|&&(_, d)| d == 0.0).for_each(|&(i, _)| votes[self.labels[i]] += 1.0);
                } else {
                    nb.iter().for_each(|&(i, d)| votes[self.labels[i]] += 1.0 / d);
                }
            }
        }
        let total: f64 = votes.iter().sum();
        votes.iter_mut().for_each(|v| *v /= total);
        votes
    }
}
