//! Gaussian naive Bayes.

use serde::{Deserialize, Serialize};

use super::gbt::softmax;
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNbModel {
    pub log_priors: Vec<f64>,
    /// Per class, per feature.
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

/// Variance floor used when the smoothing term works out to zero.
const MIN_VARIANCE: f64 = 1e-300;

impl GaussianNbModel {
    pub fn fit(
        x: &FeatureMatrix,
        y: &[usize],
        class_count: usize,
        var_smoothing: f64,
        priors: Option<&[f64]>,
    ) -> Result<Self> {
        let (n, d) = (x.rows(), x.cols());
        let mut counts = vec![0usize; class_count];
        let mut means = vec![vec![0.0; d]; class_count];
        for i in 0..n {
            counts[y[i]] += 1;
            for (m, v) in means[y[i]].iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        for (c, m) in means.iter_mut().enumerate() {
            if counts[c] > 0 {
                m.iter_mut().for_each(|v| *v /= counts[c] as f64);
            }
        }
        let mut variances = vec![vec![0.0; d]; class_count];
        for i in 0..n {
            let c = y[i];
            for j in 0..d {
                variances[c][j] += (x.get(i, j) - means[c][j]).powi(2);
            }
        }
        // Smoothing is a fraction of the largest overall feature variance.
        let mut overall_max = 0.0f64;
        for j in 0..d {
            let mu = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (x.get(i, j) - mu).powi(2)).sum::<f64>() / n as f64;
            overall_max = overall_max.max(var);
        }
        let epsilon = (var_smoothing * overall_max).max(MIN_VARIANCE);
        for (c, v) in variances.iter_mut().enumerate() {
            for s in v.iter_mut() {
                *s = if counts[c] > 0 { *s / counts[c] as f64 } else { 0.0 } + epsilon;
            }
        }
        let log_priors = match priors {
            Some(p) => {
                if p.len() != class_count {
                    return Err(Error::Hyperparameter(format!(
                        "priors has {} entries for {class_count} classes",
                        p.len()
                    )));
                }
                p.iter().map(|v| v.ln()).collect()
            }
            None => counts.iter().map(|&c| (c as f64 / n as f64).ln()).collect(),
        };
        Ok(Self { log_priors, means, variances })
    }

    pub fn joint_log_likelihood(&self, x: &[f64]) -> Vec<f64> {
        self.log_priors
            .iter()
            .enumerate()
            .map(|(c, lp)| {
                lp + x
                    .iter()
                    .zip(&self.means[c])
                    .zip(&self.variances[c])
                    .map(|((v, m), s)| -0.5 * (2.0 * std::f64::consts::PI * s).ln() - (v - m).powi(2) / (2.0 * s))
                    .sum::<f64>()
            })
            .collect()
    }

    pub fn predict_proba_row(&self, x: &[f64]) -> Vec<f64> {
        let jll = self.joint_log_likelihood(x);
        if jll.iter().all(|v| *v == f64::NEG_INFINITY) {
            return vec![1.0 / jll.len() as f64; jll.len()];
        }
        softmax(&jll)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn closed_form_posterior() {
        // Class 0 at {0, 2}, class 1 at {4, 6}: means 1 and 5, variance 1.
        let x = FeatureMatrix::from_rows(&[vec![0.0], vec![2.0], vec![4.0], vec![6.0]]).unwrap();
        let m = GaussianNbModel::fit(&x, &[0, 0, 1, 1], 2, 0.0, None).unwrap();
        assert_abs_diff_eq!(m.means[0][0], 1.0);
        assert_abs_diff_eq!(m.variances[1][0], 1.0, epsilon = 1e-12);
        // At x = 3 both classes are equidistant.
        let p = m.predict_proba_row(&[3.0]);
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-12);
        // At x = 2: log ratio = ((2-5)^2 - (2-1)^2) / 2 = 4.
        let p = m.predict_proba_row(&[2.0]);
        assert_abs_diff_eq!(p[0], 1.0 / (1.0 + (-4.0f64).exp()), epsilon = 1e-12);
    }

    #[test]
    fn priors_override_and_length_check() {
        let x = FeatureMatrix::from_rows(&[vec![0.0], vec![2.0], vec![4.0], vec![6.0]]).unwrap();
        let m = GaussianNbModel::fit(&x, &[0, 0, 1, 1], 2, 1e-9, Some(&[0.3, 0.7])).unwrap();
        let p = m.predict_proba_row(&[3.0]);
        assert_abs_diff_eq!(p[1], 0.7, epsilon = 1e-9);
        assert!(GaussianNbModel::fit(&x, &[0, 0, 1, 1], 2, 1e-9, Some(&[1.0])).is_err());
    }
}
