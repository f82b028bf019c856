//! Exhaustive grid search scored by stratified k-fold cross-validation on the
//! training partition.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::{self, accuracy, ClassifierSpec, Family, ParamValue};
use crate::data::{FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};
use crate::par::{derive_seed, try_map_indexed, Execution};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_GRID_CAP: usize = 100_000;

/// One point of a search space, in axis order.
pub type Assignment = Vec<(String, ParamValue)>;

/// Cartesian hyperparameter space for one family. Axes expand in the order
/// listed, last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub family: Family,
    pub axes: Vec<(String, Vec<ParamValue>)>,
}

impl GridSpec {
    pub fn new(family: Family) -> Self {
        Self { family, axes: Vec::new() }
    }

    /// Adds an axis, replacing any existing axis of the same name in place.
    pub fn axis(mut self, name: &str, values: Vec<ParamValue>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config(format!("{}: axis {name} has no values", self.family)));
        }
        for v in &values {
            classifiers::validate_param(self.family, name, v)?;
        }
        match self.axes.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = values,
            None => self.axes.push((name.to_string(), values)),
        }
        Ok(self)
    }

    pub fn size(&self) -> u128 {
        self.axes.iter().map(|(_, v)| v.len() as u128).product()
    }

    pub fn axis_names(&self) -> Vec<&str> {
        self.axes.iter().map(|(n, _)| n.as_str()).collect()
    }
}

pub fn expand_grid(g: &GridSpec) -> Result<Vec<Assignment>> {
    expand_grid_capped(g, DEFAULT_GRID_CAP)
}

pub fn expand_grid_capped(g: &GridSpec, cap: usize) -> Result<Vec<Assignment>> {
    if g.axes.is_empty() {
        return Err(Error::Config(format!("{}: grid has no axes", g.family)));
    }
    let size = g.size();
    if size > cap as u128 {
        return Err(Error::GridSize { size, cap });
    }
    let mut out: Vec<Assignment> = vec![Vec::new()];
    for (name, values) in &g.axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut a = prefix.clone();
                    a.push((name.clone(), v.clone()));
                    a
                })
            })
            .collect();
    }
    Ok(out)
}

/// Builds a spec from an assignment.
pub fn spec_for(family: Family, assignment: &Assignment, seed: u64) -> Result<ClassifierSpec> {
    let mut spec = ClassifierSpec::new(family, seed);
    for (name, value) in assignment {
        spec.set(name, value.clone())?;
    }
    Ok(spec)
}

/// Cross-validation outcome of one assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    /// Position in grid order.
    pub index: usize,
    pub assignment: Assignment,
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of the fold accuracies.
    pub std: f64,
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Test-fold indices (each ascending). Every class is shuffled with the seed,
/// the classes are laid end to end in class order, and position `j` of that
/// sequence goes to fold `j mod folds`.
pub fn stratified_folds(labels: &[usize], class_count: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Config(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    let mut members = vec![Vec::new(); class_count];
    for (i, &c) in labels.iter().enumerate() {
        members[c].push(i);
    }
    for (class, m) in members.iter().enumerate() {
        if m.len() < folds {
            return Err(Error::Fold { class, count: m.len(), folds });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vec::new(); folds];
    let mut position = 0;
    for m in members.iter_mut() {
        m.shuffle(&mut rng);
        for &i in m.iter() {
            out[position % folds].push(i);
            position += 1;
        }
    }
    out.iter_mut().for_each(|f| f.sort_unstable());
    Ok(out)
}

/// Anything that can be trained and scored inside a fold.
pub trait Learner: Sync {
    fn fit_predict(&self, train: &LabeledDataset, test: &FeatureMatrix) -> Result<Vec<usize>>;
}

impl Learner for ClassifierSpec {
    fn fit_predict(&self, train: &LabeledDataset, test: &FeatureMatrix) -> Result<Vec<usize>> {
        classifiers::fit(self, train)?.predict(test)
    }
}

fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    test.iter().for_each(|&i| mask[i] = false);
    (0..n).filter(|&i| mask[i]).collect()
}

/// Held-out predictions of one learner on each fold, in fold index order.
pub fn fold_predictions<L: Learner + ?Sized>(
    data: &LabeledDataset,
    learner: &L,
    folds: &[Vec<usize>],
) -> Result<Vec<Vec<usize>>> {
    folds
        .iter()
        .map(|test| {
            let train = data.subset(&complement(data.len(), test));
            learner.fit_predict(&train, &data.features.select_rows(test))
        })
        .collect()
}

/// Fold accuracies of one learner over fixed folds.
pub fn fold_accuracies<L: Learner + ?Sized>(data: &LabeledDataset, learner: &L, folds: &[Vec<usize>]) -> Result<Vec<f64>> {
    let preds = fold_predictions(data, learner, folds)?;
    Ok(folds
        .iter()
        .zip(&preds)
        .map(|(test, pred)| {
            let truth: Vec<usize> = test.iter().map(|&i| data.labels[i]).collect();
            accuracy(pred, &truth)
        })
        .collect())
}

pub fn cross_validate(train: &LabeledDataset, spec: &ClassifierSpec, folds: usize, seed: u64) -> Result<TrialResult> {
    let f = stratified_folds(&train.labels, train.class_count, folds, seed)?;
    let accs = fold_accuracies(train, spec, &f)?;
    let (mean, std) = mean_std(&accs);
    let assignment = spec.hyperparams.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    Ok(TrialResult { index: 0, assignment, fold_accuracies: accs, mean, std })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    pub folds: usize,
    pub seed: u64,
    pub exec: Execution,
    pub cap: usize,
}

impl SearchOptions {
    pub fn new(folds: usize, seed: u64) -> Self {
        Self { folds, seed, exec: Execution::default(), cap: DEFAULT_GRID_CAP }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }
}

/// Index of the winning trial: highest mean, then lowest std, then earliest.
pub fn best_trial(trials: &[TrialResult]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, t) in trials.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let cur = &trials[b];
                t.mean > cur.mean || (t.mean == cur.mean && t.std < cur.std)
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Scores every learner on one shared set of folds.
pub fn search_learners<L: Learner + Sync>(
    train: &LabeledDataset,
    learners: &[(Assignment, L)],
    opts: &SearchOptions,
) -> Result<Vec<TrialResult>> {
    let folds = stratified_folds(&train.labels, train.class_count, opts.folds, opts.seed)?;
    try_map_indexed(learners.len(), opts.exec, |i| {
        let (assignment, learner) = &learners[i];
        let accs = fold_accuracies(train, learner, &folds)?;
        let (mean, std) = mean_std(&accs);
        Ok(TrialResult { index: i, assignment: assignment.clone(), fold_accuracies: accs, mean, std })
    })
}

pub fn grid_search(
    train: &LabeledDataset,
    g: &GridSpec,
    folds: usize,
    seed: u64,
) -> Result<(ClassifierSpec, Vec<TrialResult>)> {
    grid_search_with(train, g, &SearchOptions::new(folds, seed))
}

/// Grid search with explicit execution options. Trial `i` trains with seed
/// `derive_seed(seed, i)`; all trials share the same folds.
pub fn grid_search_with(
    train: &LabeledDataset,
    g: &GridSpec,
    opts: &SearchOptions,
) -> Result<(ClassifierSpec, Vec<TrialResult>)> {
    let assignments = expand_grid_capped(g, opts.cap)?;
    let learners = assignments
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            let spec = spec_for(g.family, &a, derive_seed(opts.seed, i as u64))?;
            Ok((a, spec))
        })
        .collect::<Result<Vec<_>>>()?;
    let trials = search_learners(train, &learners, opts)
        .map_err(|e| e.context(format!("grid search over {}", g.family)))?;
    let best = best_trial(&trials).expect("nonempty grid");
    Ok((learners[best].1.clone(), trials))
}

/// Writes one row per trial: axis values, fold accuracies, mean, std.
pub fn write_trials_csv(path: &Path, g: &GridSpec, trials: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let folds = trials.first().map_or(0, |t| t.fold_accuracies.len());
    let mut header: Vec<String> = g.axis_names().iter().map(|s| s.to_string()).collect();
    header.extend((1..=folds).map(|f| format!("fold_{f}")));
    header.push("mean".into());
    header.push("std".into());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for t in trials {
        let mut row: Vec<String> = t.assignment.iter().map(|(_, v)| v.to_string()).collect();
        row.extend(t.fold_accuracies.iter().map(|a| a.to_string()));
        row.push(t.mean.to_string());
        row.push(t.std.to_string());
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format { path: path.to_path_buf(), reason: e.to_string() }
}

/// Named search-space presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GridPreset {
    /// A small subset of the full spaces, for desk-scale runs.
    #[default]
    Compact,
    /// Every axis value of every family.
    Full,
}

impl std::str::FromStr for GridPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "compact" => Ok(GridPreset::Compact),
            "full" => Ok(GridPreset::Full),
            other => Err(Error::Config(format!("unknown grid preset {other:?} (expected compact or full)"))),
        }
    }
}

fn ints(v: &[i64]) -> Vec<ParamValue> {
    v.iter().map(|&i| ParamValue::Int(i)).collect()
}

fn floats(v: &[f64]) -> Vec<ParamValue> {
    v.iter().map(|&f| ParamValue::Float(f)).collect()
}

fn strs(v: &[&str]) -> Vec<ParamValue> {
    v.iter().map(|s| ParamValue::str(s)).collect()
}

fn bools() -> Vec<ParamValue> {
    vec![ParamValue::Bool(true), ParamValue::Bool(false)]
}

fn layers(v: &[&[usize]]) -> Vec<ParamValue> {
    v.iter().map(|l| ParamValue::Layers(l.to_vec())).collect()
}

/// The full search space for a family. Two-class prior vectors only
/// apply when `class_count == 2`.
pub fn full_grid(family: Family, class_count: usize) -> GridSpec {
    let g = GridSpec::new(family);
    let build = || -> Result<GridSpec> {
        Ok(match family {
            Family::Gbt => g
                .axis("max_depth", ints(&[3, 5, 7]))?
                .axis("learning_rate", floats(&[0.1, 0.01, 0.001]))?
                .axis("subsample", floats(&[0.5, 0.7, 1.0]))?
                .axis("n_estimators", ints(&[100, 200, 300]))?,
            Family::Mlp => g
                .axis(
                    "hidden_layer_sizes",
                    layers(&[&[50], &[100, 22], &[100, 100, 50], &[100, 50, 36, 30], &[100, 100, 200, 150, 100]]),
                )?
                .axis("activation", strs(&["relu", "tanh", "logistic"]))?
                .axis("solver", strs(&["adam", "sgd", "lbfgs"]))?
                .axis("max_iter", ints(&[1000]))?
                .axis("momentum", floats(&[0.9, 0.95, 0.99]))?,
            Family::GaussianNb => {
                let mut priors = vec![ParamValue::None];
                if class_count == 2 {
                    priors.extend([[0.3, 0.7], [0.4, 0.6], [0.5, 0.5]].iter().map(|p| ParamValue::Floats(p.to_vec())));
                }
                g.axis("var_smoothing", floats(&[1e-9, 1e-8, 1e-7, 1e-6, 1e-5]))?.axis("priors", priors)?
            }
            Family::AdaBoost => g
                .axis("n_estimators", ints(&[50, 70, 90, 120, 180, 200]))?
                .axis("learning_rate", floats(&[0.001, 0.01, 0.1, 1.0, 10.0]))?,
            Family::Knn => g
                .axis("n_neighbors", ints(&(1..=30).collect::<Vec<_>>()))?
                .axis("weights", strs(&["uniform", "distance"]))?
                .axis("algorithm", strs(&["auto", "ball_tree", "kd_tree", "brute"]))?
                .axis("leaf_size", ints(&(10..=50).step_by(5).collect::<Vec<_>>()))?
                .axis("p", ints(&[1, 2]))?
                .axis("metric", strs(&["euclidean", "manhattan", "minkowski"]))?
                .axis("n_jobs", ints(&[-1]))?,
            Family::RandomForest => g
                .axis("n_estimators", ints(&[100, 200, 300, 400, 500]))?
                .axis("max_depth", {
                    let mut v = vec![ParamValue::None];
                    v.extend(ints(&[10, 20, 30, 40, 50]));
                    v
                })?
                .axis("min_samples_split", ints(&[2, 5, 10]))?
                .axis("min_samples_leaf", ints(&[1, 2, 4]))?
                .axis("max_features", strs(&["auto", "sqrt", "log2"]))?
                .axis("bootstrap", bools())?
                .axis("criterion", strs(&["gini", "entropy"]))?
                .axis("oob_score", bools())?
                .axis("random_state", ints(&[42]))?,
            Family::SvmLinear => g
                .axis("C", floats(&[0.1, 1.0, 10.0, 100.0, 1000.0]))?
                .axis("kernel", strs(&["linear"]))?
                .axis("tol", floats(&[1e-3, 1e-4, 1e-5]))?
                .axis("class_weight", vec![ParamValue::None, ParamValue::str("balanced")])?
                .axis("random_state", ints(&[42]))?,
            Family::SvmSigmoid => g
                .axis("kernel", strs(&["sigmoid"]))?
                .axis("C", floats(&[0.1, 1.0, 10.0, 100.0]))?
                .axis("gamma", strs(&["scale", "auto"]))?
                .axis("coef0", floats(&[0.0, 0.1, 0.5, 1.0]))?
                .axis("tol", floats(&[1e-3, 1e-4, 1e-5]))?
                .axis("class_weight", vec![ParamValue::None, ParamValue::str("balanced")])?
                .axis("shrinking", bools())?
                .axis("probability", bools())?
                .axis("cache_size", floats(&[200.0, 500.0, 100.0]))?
                .axis("random_state", ints(&[42]))?,
            Family::SvmRbf => g
                .axis("C", floats(&[0.1, 1.0, 10.0, 100.0]))?
                .axis("gamma", {
                    let mut v = strs(&["scale", "auto"]);
                    v.extend(floats(&[0.1, 1.0, 10.0]));
                    v
                })?
                .axis("kernel", strs(&["rbf"]))?
                .axis("class_weight", vec![ParamValue::None, ParamValue::str("balanced")])?
                .axis("shrinking", bools())?
                .axis("probability", bools())?
                .axis("tol", floats(&[1e-3, 1e-4]))?
                .axis("cache_size", floats(&[200.0, 500.0, 1000.0]))?
                .axis("max_iter", ints(&[-1, 1000, 5000]))?,
        })
    };
    build().expect("full grid is valid")
}

/// A few points from each full space, skipping axes that cannot change
/// predictions here.
pub fn compact_grid(family: Family) -> GridSpec {
    let g = GridSpec::new(family);
    let build = || -> Result<GridSpec> {
        Ok(match family {
            Family::Gbt => g
                .axis("max_depth", ints(&[3, 5]))?
                .axis("learning_rate", floats(&[0.1]))?
                .axis("subsample", floats(&[0.7, 1.0]))?
                .axis("n_estimators", ints(&[100]))?,
            Family::Mlp => g
                .axis("hidden_layer_sizes", layers(&[&[50], &[100, 22]]))?
                .axis("activation", strs(&["relu", "tanh"]))?
                .axis("solver", strs(&["lbfgs"]))?
                .axis("max_iter", ints(&[200]))?,
            Family::GaussianNb => g.axis("var_smoothing", floats(&[1e-9, 1e-7, 1e-5]))?,
            Family::AdaBoost => g.axis("n_estimators", ints(&[50, 100]))?.axis("learning_rate", floats(&[0.1, 1.0]))?,
            Family::Knn => g
                .axis("n_neighbors", ints(&[1, 3, 5, 7, 9]))?
                .axis("weights", strs(&["uniform", "distance"]))?
                .axis("metric", strs(&["euclidean", "manhattan"]))?,
            Family::RandomForest => g
                .axis("n_estimators", ints(&[100]))?
                .axis("max_depth", vec![ParamValue::None, ParamValue::Int(10)])?
                .axis("criterion", strs(&["gini", "entropy"]))?,
            Family::SvmLinear => g.axis("C", floats(&[0.1, 1.0, 10.0]))?,
            Family::SvmSigmoid => g.axis("C", floats(&[0.1, 1.0, 10.0]))?.axis("gamma", strs(&["scale", "auto"]))?,
            Family::SvmRbf => g.axis("C", floats(&[0.1, 1.0, 10.0, 100.0]))?.axis("gamma", strs(&["scale", "auto"]))?,
        })
    };
    build().expect("compact grid is valid")
}

pub fn preset_grid(preset: GridPreset, family: Family, class_count: usize) -> GridSpec {
    match preset {
        GridPreset::Compact => compact_grid(family),
        GridPreset::Full => full_grid(family, class_count),
    }
}
