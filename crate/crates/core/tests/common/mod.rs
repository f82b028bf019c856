#![allow(dead_code)]

use std::path::{Path, PathBuf};

use dualens::data::{save_feature_set, FeatureMatrix, LabeledDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Standard normal draw by Box-Muller.
pub fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Isotropic Gaussian blobs with unit spread around well separated centres.
pub fn blobs(n: usize, classes: usize, dims: usize, spread: f64, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..classes).map(|_| (0..dims).map(|_| rng.gen_range(-6.0..6.0)).collect()).collect();
    let mut rows = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        rows.push(centres[c].iter().map(|m| m + spread * normal(&mut rng)).collect());
        raw.push(c as i64);
    }
    LabeledDataset::from_raw_labels(FeatureMatrix::from_rows(&rows).unwrap(), &raw, "blobs").unwrap()
}

/// Inverse standard normal CDF at 0.98, 0.90 and 0.60.
pub const PROBIT_098: f64 = 2.053_748_910_631_823;
pub const PROBIT_090: f64 = 1.281_551_565_544_600_5;
pub const PROBIT_060: f64 = 0.253_347_103_135_799_7;

/// A two-class feature set whose Bayes-optimal accuracy is `Phi(shift)`:
/// one informative column with class means `+-shift` and unit noise, padded
/// with pure-noise columns. Noise is independent across sets, so fusing
/// sets with shifts `a` and `b` has Bayes accuracy `Phi(sqrt(a^2 + b^2))`.
pub fn synthetic_extractor(id: &str, labels: &[i64], shift: f64, noise_cols: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| {
            let sign = if l == 1 { 1.0 } else { -1.0 };
            let mut row = vec![sign * shift + normal(&mut rng)];
            row.extend((0..noise_cols).map(|_| normal(&mut rng)));
            row
        })
        .collect();
    LabeledDataset::from_raw_labels(FeatureMatrix::from_rows(&rows).unwrap(), labels, id).unwrap()
}

/// Balanced shuffled two-class labels.
pub fn balanced_labels(n: usize, seed: u64) -> Vec<i64> {
    use rand::seq::SliceRandom;
    let mut labels: Vec<i64> = (0..n).map(|i| (i % 2) as i64).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    labels
}

/// Writes three synthetic extractors (Bayes accuracy 0.98 / 0.90 / 0.60) on
/// 600 shared samples into `dir`.
pub fn write_synthetic_extractors(dir: &Path) {
    let labels = balanced_labels(600, 5);
    for (i, (id, shift)) in [("alphanet", PROBIT_098), ("betanet", PROBIT_090), ("gammanet", PROBIT_060)].iter().enumerate() {
        let ds = synthetic_extractor(id, &labels, *shift, 3, 100 + i as u64);
        save_feature_set(&dir.join(format!("{id}.fset")), &ds).unwrap();
    }
}
