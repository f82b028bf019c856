//! Train-fitted feature transforms: Min-Max scaling, PCA keeping the top half
//! of the components, and SMOTE oversampling.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};

/// Per-column range of a training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub fn minmax_fit(train: &FeatureMatrix) -> MinMaxStats {
    let mut min = train.row(0).to_vec();
    let mut max = min.clone();
    for row in train.iter_rows().skip(1) {
        for (j, &v) in row.iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    MinMaxStats { min, max }
}

/// `|x - min| / (max - min)` per column. Zero-range columns map to 0 and
/// out-of-range test values are left unclipped.
pub fn minmax_apply(x: &FeatureMatrix, s: &MinMaxStats) -> Result<FeatureMatrix> {
    if x.cols() != s.min.len() {
        return Err(Error::shape(format!("{} columns", s.min.len()), x.cols()));
    }
    let values = x
        .iter_rows()
        .flat_map(|row| {
            row.iter().enumerate().map(|(j, &v)| {
                let range = s.max[j] - s.min[j];
                if range > 0.0 {
                    ((v - s.min[j]) / range).abs()
                } else {
                    0.0
                }
            })
        })
        .collect();
    FeatureMatrix::new(x.rows(), x.cols(), values)
}

/// Principal axes of a training matrix, strongest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` orthonormal rows of length `d`.
    pub components: Vec<Vec<f64>>,
    /// Sample variance along each component (n - 1 denominator), nonincreasing.
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }
}

/// Number of components kept for a `d`-dimensional input.
pub fn retained_components(d: usize) -> usize {
    d.div_ceil(2)
}

pub fn pca_fit(train: &FeatureMatrix) -> Result<PcaModel> {
    let (n, d) = (train.rows(), train.cols());
    if n < 2 {
        return Err(Error::Fit(format!("PCA needs at least 2 rows, got {n}")));
    }
    let mut mean = vec![0.0; d];
    for row in train.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, d, |i, j| train.get(i, j) - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let k = retained_components(d);
    let mut components = Vec::with_capacity(k);
    let mut explained_variance = Vec::with_capacity(k);
    for &idx in &order[..k] {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        // Sign convention: the largest-magnitude entry is positive.
        let pivot = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaModel { mean, components, explained_variance })
}

/// Projects `(x - mean)` onto the retained components.
pub fn pca_apply(x: &FeatureMatrix, m: &PcaModel) -> Result<FeatureMatrix> {
    if x.cols() != m.input_dim() {
        return Err(Error::shape(format!("{} columns", m.input_dim()), x.cols()));
    }
    let k = m.output_dim();
    let mut values = Vec::with_capacity(x.rows() * k);
    let mut centered = vec![0.0; x.cols()];
    for row in x.iter_rows() {
        for (c, (v, mu)) in centered.iter_mut().zip(row.iter().zip(&m.mean)) {
            *c = v - mu;
        }
        for comp in &m.components {
            values.push(comp.iter().zip(&centered).map(|(a, b)| a * b).sum());
        }
    }
    FeatureMatrix::new(x.rows(), k, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self { k_neighbors: 5, seed: 42 }
    }
}

/// Where a synthetic row came from: `row = parent + t * (neighbor - parent)`,
/// with `parent` and `neighbor` row indices into the input dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticOrigin {
    pub class: usize,
    pub parent: usize,
    pub neighbor: usize,
    pub t: f64,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices (into `members`) of the `k` nearest other members of `members[i]`.
/// Distance ties go to the lower index.
fn nearest_members(x: &FeatureMatrix, members: &[usize], i: usize, k: usize) -> Vec<usize> {
    let anchor = x.row(members[i]);
    let mut cand: Vec<(f64, usize)> = members
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, &row)| (squared_distance(anchor, x.row(row)), j))
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.truncate(k);
    cand.into_iter().map(|(_, j)| j).collect()
}

/// Oversamples every class up to the majority count. Originals come first, in
/// input order; synthetic rows follow class by class.
pub fn smote_oversample(ds: &LabeledDataset, cfg: &SmoteConfig) -> Result<LabeledDataset> {
    smote_with_origins(ds, cfg).map(|(out, _)| out)
}

/// [`smote_oversample`], also returning the provenance of each synthetic row.
pub fn smote_with_origins(ds: &LabeledDataset, cfg: &SmoteConfig) -> Result<(LabeledDataset, Vec<SyntheticOrigin>)> {
    if cfg.k_neighbors == 0 {
        return Err(Error::Config("SMOTE needs k_neighbors >= 1".into()));
    }
    let counts = ds.class_counts();
    let target = counts.iter().copied().max().unwrap_or(0);
    let x = &ds.features;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut origins = Vec::new();
    let mut values = x.values().to_vec();
    let mut labels = ds.labels.clone();

    for class in 0..ds.class_count {
        let need = target - counts[class];
        if need == 0 {
            continue;
        }
        if counts[class] <= cfg.k_neighbors {
            return Err(Error::Config(format!(
                "class {class} has {} samples, SMOTE with k={} needs more than k",
                counts[class], cfg.k_neighbors
            )));
        }
        let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        let neighbours: Vec<Vec<usize>> =
            (0..members.len()).map(|i| nearest_members(x, &members, i, cfg.k_neighbors)).collect();
        for _ in 0..need {
            let pi = rng.gen_range(0..members.len());
            let ni = *neighbours[pi].choose(&mut rng).expect("k >= 1 neighbours");
            let t: f64 = rng.gen();
            let (p, q) = (x.row(members[pi]), x.row(members[ni]));
            values.extend(p.iter().zip(q).map(|(a, b)| a + (b - a) * t));
            labels.push(class);
            origins.push(SyntheticOrigin { class, parent: members[pi], neighbor: members[ni], t });
        }
    }
    let features = FeatureMatrix::new(labels.len(), x.cols(), values)?;
    Ok((LabeledDataset { features, labels, ..ds.clone() }, origins))
}
