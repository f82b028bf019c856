//! Binary decision trees: weighted CART for classification and a
//! second-order regression tree for gradient boosting.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: Vec<f64> },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Nodes in creation order; the root is node 0. Rows with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value(&self, x: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, at: usize) -> usize {
            match &t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
            }
        }
        walk(self, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Class with the largest leaf share; ties go to the lower id.
    pub fn predict_class(&self, x: &[f64]) -> usize {
        argmax(self.leaf_value(x))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    Gini,
    Entropy,
}

impl Criterion {
    fn impurity(self, dist: &[f64], total: f64) -> f64 {
        if total <= 0.0 {
            return 0.0;
        }
        match self {
            Criterion::Gini => 1.0 - dist.iter().map(|&w| (w / total).powi(2)).sum::<f64>(),
            Criterion::Entropy => -dist
                .iter()
                .filter(|&&w| w > 0.0)
                .map(|&w| {
                    let p = w / total;
                    p * p.log2()
                })
                .sum::<f64>(),
        }
    }
}

/// How many features each split considers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FeatureSubset {
    All,
    Sqrt,
    Log2,
    Count(usize),
}

impl FeatureSubset {
    pub fn resolve(self, d: usize) -> usize {
        let m = match self {
            FeatureSubset::All => d,
            FeatureSubset::Sqrt => (d as f64).sqrt().floor() as usize,
            FeatureSubset::Log2 => (d as f64).log2().floor() as usize,
            FeatureSubset::Count(c) => c,
        };
        m.clamp(1, d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: FeatureSubset,
    pub criterion: Criterion,
}

impl Default for CartParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: FeatureSubset::All,
            criterion: Criterion::Gini,
        }
    }
}

/// Midpoint threshold that still separates `lo` from `hi` after rounding.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let t = lo + (hi - lo) / 2.0;
    if t >= hi || t < lo {
        lo
    } else {
        t
    }
}

fn sorted_by_feature(x: &FeatureMatrix, rows: &[usize], f: usize) -> Vec<usize> {
    let mut order = rows.to_vec();
    order.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
    order
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    score: f64,
}

/// Fits a classification tree on rows with positive weight. Leaves hold the
/// weighted class distribution normalised to sum to one.
pub fn fit_classification_tree<R: Rng>(
    x: &FeatureMatrix,
    y: &[usize],
    class_count: usize,
    weights: &[f64],
    params: &CartParams,
    rng: &mut R,
) -> Tree {
    let rows: Vec<usize> = (0..x.rows()).filter(|&i| weights[i] > 0.0).collect();
    let mut tree = Tree { nodes: Vec::new() };
    let mut features: Vec<usize> = (0..x.cols()).collect();
    let m = params.max_features.resolve(x.cols());
    // (node slot, rows, depth)
    let mut stack = vec![(0usize, rows, 0usize)];
    tree.nodes.push(Node::Leaf { value: Vec::new() });
    while let Some((slot, rows, depth)) = stack.pop() {
        let mut dist = vec![0.0; class_count];
        for &i in &rows {
            dist[y[i]] += weights[i];
        }
        let total: f64 = dist.iter().sum();
        let pure = dist.iter().filter(|&&w| w > 0.0).count() <= 1;
        let stop = pure
            || params.max_depth.is_some_and(|d| depth >= d)
            || rows.len() < params.min_samples_split
            || rows.len() < 2 * params.min_samples_leaf;
        let split = if stop {
            None
        } else {
            let parent = total * params.criterion.impurity(&dist, total);
            features.shuffle(rng);
            best_class_split(x, y, class_count, weights, &rows, &features, m, parent, params)
        };
        match split {
            None => {
                let value = if total > 0.0 { dist.iter().map(|w| w / total).collect() } else { dist };
                tree.nodes[slot] = Node::Leaf { value };
            }
            Some(s) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| x.get(i, s.feature) <= s.threshold);
                let left = tree.nodes.len();
                tree.nodes.push(Node::Leaf { value: Vec::new() });
                let right = tree.nodes.len();
                tree.nodes.push(Node::Leaf { value: Vec::new() });
                tree.nodes[slot] = Node::Split { feature: s.feature, threshold: s.threshold, left, right };
                stack.push((right, r, depth + 1));
                stack.push((left, l, depth + 1));
            }
        }
    }
    tree
}

#[allow(clippy::too_many_arguments)]
fn best_class_split(
    x: &FeatureMatrix,
    y: &[usize],
    class_count: usize,
    weights: &[f64],
    rows: &[usize],
    features: &[usize],
    m: usize,
    parent: f64,
    params: &CartParams,
) -> Option<SplitChoice> {
    let msl = params.min_samples_leaf;
    let mut best: Option<SplitChoice> = None;
    for (visited, &f) in features.iter().enumerate() {
        // Past the sampled subset, keep looking only until something splits.
        if visited >= m && best.is_some() {
            break;
        }
        let order = sorted_by_feature(x, rows, f);
        let mut left = vec![0.0; class_count];
        let mut right = vec![0.0; class_count];
        for &i in &order {
            right[y[i]] += weights[i];
        }
        let mut wl = 0.0;
        let mut wr: f64 = right.iter().sum();
        for pos in 0..order.len() - 1 {
            let i = order[pos];
            left[y[i]] += weights[i];
            right[y[i]] -= weights[i];
            wl += weights[i];
            wr -= weights[i];
            let n_left = pos + 1;
            if n_left < msl || order.len() - n_left < msl {
                continue;
            }
            let lo = x.get(i, f);
            let hi = x.get(order[pos + 1], f);
            if lo >= hi {
                continue;
            }
            let child = wl * params.criterion.impurity(&left, wl) + wr * params.criterion.impurity(&right, wr);
            let score = parent - child;
            if best.as_ref().map_or(true, |b| score > b.score + 1e-12) {
                best = Some(SplitChoice { feature: f, threshold: midpoint(lo, hi), score });
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientTreeParams {
    pub max_depth: usize,
    pub lambda: f64,
    pub min_child_weight: f64,
}

/// Fits a regression tree to first and second loss derivatives. Each leaf
/// holds the single value `-G / (H + lambda)` over its rows.
pub fn fit_gradient_tree(
    x: &FeatureMatrix,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    params: &GradientTreeParams,
) -> Tree {
    let mut tree = Tree { nodes: vec![Node::Leaf { value: Vec::new() }] };
    let mut stack = vec![(0usize, rows.to_vec(), 0usize)];
    while let Some((slot, rows, depth)) = stack.pop() {
        let g: f64 = rows.iter().map(|&i| grad[i]).sum();
        let h: f64 = rows.iter().map(|&i| hess[i]).sum();
        let split = if depth >= params.max_depth || rows.len() < 2 {
            None
        } else {
            best_gradient_split(x, &rows, grad, hess, g, h, params)
        };
        match split {
            None => tree.nodes[slot] = Node::Leaf { value: vec![-g / (h + params.lambda)] },
            Some(s) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| x.get(i, s.feature) <= s.threshold);
                let left = tree.nodes.len();
                tree.nodes.push(Node::Leaf { value: Vec::new() });
                let right = tree.nodes.len();
                tree.nodes.push(Node::Leaf { value: Vec::new() });
                tree.nodes[slot] = Node::Split { feature: s.feature, threshold: s.threshold, left, right };
                stack.push((right, r, depth + 1));
                stack.push((left, l, depth + 1));
            }
        }
    }
    tree
}

fn best_gradient_split(
    x: &FeatureMatrix,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    g: f64,
    h: f64,
    params: &GradientTreeParams,
) -> Option<SplitChoice> {
    let lambda = params.lambda;
    let parent = g * g / (h + lambda);
    let mut best: Option<SplitChoice> = None;
    for f in 0..x.cols() {
        let order = sorted_by_feature(x, rows, f);
        let (mut gl, mut hl) = (0.0, 0.0);
        for pos in 0..order.len() - 1 {
            let i = order[pos];
            gl += grad[i];
            hl += hess[i];
            let (gr, hr) = (g - gl, h - hl);
            if hl < params.min_child_weight || hr < params.min_child_weight {
                continue;
            }
            let lo = x.get(i, f);
            let hi = x.get(order[pos + 1], f);
            if lo >= hi {
                continue;
            }
            let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
            if gain > 1e-12 && best.as_ref().map_or(true, |b| gain > b.score) {
                best = Some(SplitChoice { feature: f, threshold: midpoint(lo, hi), score: gain });
            }
        }
    }
    best
}
