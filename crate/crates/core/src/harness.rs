//! Config-driven runs: load feature sets, evaluate, select, fuse, vote, and
//! persist every table, trial and prediction behind the reported numbers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classifiers::tree::argmax;
use crate::classifiers::{self, accuracy, ClassifierSpec, Family, FittedModel, ParamValue};
use crate::data::{self, LabeledDataset, SplitSpec};
use crate::ensemble::{
    self, fusion_subsets, rank_rows, select_top_k, top_families, vote_labels, CellOutcome, EvalOptions,
    EvaluationTable, FamilyRule, Selection,
};
use crate::error::{Error, Result};
use crate::hpo::{self, GridPreset, GridSpec, SearchOptions, TrialResult};
use crate::par::{try_map_indexed, Execution};
use crate::transforms::{self, SmoteConfig};

/// Which train-fitted transforms run before the fusion and vote experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    Simple,
    NormPca,
    Smote,
    NormPcaSmote,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Simple, Variant::NormPca, Variant::Smote, Variant::NormPcaSmote];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Simple => "simple",
            Variant::NormPca => "norm_pca",
            Variant::Smote => "smote",
            Variant::NormPcaSmote => "norm_pca_smote",
        }
    }

    pub fn normalizes(self) -> bool {
        matches!(self, Variant::NormPca | Variant::NormPcaSmote)
    }

    pub fn oversamples(self) -> bool {
        matches!(self, Variant::Smote | Variant::NormPcaSmote)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '+'], "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected simple, norm_pca, smote or norm_pca_smote)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub features_dir: PathBuf,
    /// Shared labels file; otherwise each feature set uses its sibling.
    pub labels: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub variant: Variant,
    pub k_top: usize,
    pub folds: usize,
    pub seed: u64,
    pub families: Vec<Family>,
    pub train_fraction: f64,
    pub grid: GridPreset,
    pub grid_overrides: Vec<(Family, String, Vec<ParamValue>)>,
    pub smote_k: usize,
    /// Individually ranked sets that also get the classifier vote.
    pub top_extractors: usize,
    pub diversity: bool,
    pub plot: bool,
    pub exec: Execution,
}

impl RunConfig {
    pub fn new(features_dir: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            features_dir: features_dir.into(),
            labels: None,
            output_dir: output_dir.into(),
            variant: Variant::Simple,
            k_top: 3,
            folds: hpo::DEFAULT_FOLDS,
            seed: 42,
            families: Family::ALL.to_vec(),
            train_fraction: 0.8,
            grid: GridPreset::Compact,
            grid_overrides: Vec::new(),
            smote_k: 5,
            top_extractors: 5,
            diversity: true,
            plot: false,
            exec: Execution::default(),
        }
    }

    /// Parses `key = value` lines. Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::new(PathBuf::new(), base.join("out"));
        let mut seen = BTreeMap::new();
        let resolve = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Config(format!("line {line_no}: {msg}"));
            let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(prev) = seen.insert(key.to_string(), line_no) {
                return Err(bad(format!("{key} already set on line {prev}")));
            }
            let num = |what: &str| bad(format!("{key} expects {what}, got {value:?}"));
            match key {
                "features_dir" => cfg.features_dir = resolve(value),
                "labels" => cfg.labels = Some(resolve(value)),
                "output_dir" => cfg.output_dir = resolve(value),
                "variant" => cfg.variant = value.parse().map_err(|e: Error| bad(e.to_string()))?,
                "k_top" => cfg.k_top = value.parse().map_err(|_| num("an integer"))?,
                "folds" => cfg.folds = value.parse().map_err(|_| num("an integer"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| num("an unsigned integer"))?,
                "train_fraction" => cfg.train_fraction = value.parse().map_err(|_| num("a number"))?,
                "smote_k" => cfg.smote_k = value.parse().map_err(|_| num("an integer"))?,
                "top_extractors" => cfg.top_extractors = value.parse().map_err(|_| num("an integer"))?,
                "grid" => cfg.grid = value.parse().map_err(|e: Error| bad(e.to_string()))?,
                "plot" => cfg.plot = parse_bool(value).ok_or_else(|| num("true or false"))?,
                "diversity" => cfg.diversity = parse_bool(value).ok_or_else(|| num("true or false"))?,
                "parallel" => {
                    let on = parse_bool(value).ok_or_else(|| num("true or false"))?;
                    cfg.exec = if on { Execution::Parallel } else { Execution::Serial };
                }
                "families" => {
                    cfg.families = if value.eq_ignore_ascii_case("all") {
                        Family::ALL.to_vec()
                    } else {
                        value
                            .split(',')
                            .map(|f| f.parse::<Family>())
                            .collect::<Result<Vec<_>>>()
                            .map_err(|e| bad(e.to_string()))?
                    };
                }
                other => match other.strip_prefix("grid.").and_then(|rest| rest.split_once('.')) {
                    Some((family, param)) => {
                        let family: Family = family.parse().map_err(|e: Error| bad(e.to_string()))?;
                        let values = value
                            .split(';')
                            .map(|v| {
                                let v = ParamValue::parse(v)?;
                                classifiers::validate_param(family, param, &v)?;
                                Ok(v)
                            })
                            .collect::<Result<Vec<_>>>()
                            .map_err(|e| bad(e.to_string()))?;
                        cfg.grid_overrides.push((family, param.to_string(), values));
                    }
                    None => return Err(bad(format!("unknown key {other:?}"))),
                },
            }
        }
        if cfg.features_dir.as_os_str().is_empty() {
            return Err(Error::Config("features_dir is required".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.k_top) {
            return Err(Error::Config(format!("k_top must be 2 or 3, got {}", self.k_top)));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction {} outside (0, 1)", self.train_fraction)));
        }
        if self.families.is_empty() {
            return Err(Error::Config("families is empty".into()));
        }
        if self.smote_k == 0 {
            return Err(Error::Config("smote_k must be positive".into()));
        }
        Ok(())
    }

    /// The preset grid for a family with any configured axes replaced.
    pub fn grid_for(&self, family: Family, class_count: usize) -> Result<GridSpec> {
        let mut g = hpo::preset_grid(self.grid, family, class_count);
        for (f, name, values) in &self.grid_overrides {
            if *f == family {
                g = g.axis(name, values.clone())?;
            }
        }
        Ok(g)
    }

    pub fn family_rule(&self) -> FamilyRule {
        if self.diversity {
            FamilyRule::standard()
        } else {
            FamilyRule::identity()
        }
    }

    /// Canonical text form; parsing it yields the same configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "features_dir = {}", self.features_dir.display());
        if let Some(l) = &self.labels {
            let _ = writeln!(out, "labels = {}", l.display());
        }
        let _ = writeln!(out, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(out, "variant = {}", self.variant);
        let _ = writeln!(out, "k_top = {}", self.k_top);
        let _ = writeln!(out, "folds = {}", self.folds);
        let _ = writeln!(out, "seed = {}", self.seed);
        let fams: Vec<&str> = self.families.iter().map(|f| f.name()).collect();
        let _ = writeln!(out, "families = {}", fams.join(","));
        let _ = writeln!(out, "train_fraction = {}", self.train_fraction);
        let grid = match self.grid {
            GridPreset::Compact => "compact",
            GridPreset::Full => "full",
        };
        let _ = writeln!(out, "grid = {grid}");
        let _ = writeln!(out, "smote_k = {}", self.smote_k);
        let _ = writeln!(out, "top_extractors = {}", self.top_extractors);
        let _ = writeln!(out, "diversity = {}", self.diversity);
        let _ = writeln!(out, "plot = {}", self.plot);
        let _ = writeln!(out, "parallel = {}", self.exec == Execution::Parallel);
        for (f, name, values) in &self.grid_overrides {
            let vs: Vec<String> = values.iter().map(ToString::to_string).collect();
            let _ = writeln!(out, "grid.{}.{name} = {}", f.name(), vs.join(";"));
        }
        out
    }

    fn search(&self) -> SearchOptions {
        SearchOptions::new(self.folds, self.seed).with_execution(self.exec)
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Some(true),
        "false" | "no" | "0" | "off" => Some(false),
        _ => None,
    }
}

/// Every `*.fset` file in the directory, in file-name order, with shared
/// labels verified.
pub fn load_feature_sets(dir: &Path, labels: Option<&Path>) -> Result<Vec<LabeledDataset>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "fset"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no .fset files in {}", dir.display())));
    }
    let sets = paths
        .iter()
        .map(|p| match labels {
            Some(l) => data::load_feature_set_with_labels(p, l),
            None => data::load_feature_set(p),
        })
        .collect::<Result<Vec<_>>>()?;
    for (p, s) in paths.iter().zip(&sets).skip(1) {
        if s.labels != sets[0].labels || s.class_values != sets[0].class_values {
            return Err(Error::Alignment(format!("{} and {} carry different labels", paths[0].display(), p.display())));
        }
    }
    let mut ids: Vec<&str> = sets.iter().map(|s| s.source_tag.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Data(format!("extractor id {} appears in more than one file", w[0])));
    }
    Ok(sets)
}

/// Train and test partitions after the variant's transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// One line per applied transform.
    pub log: Vec<String>,
}

/// Fits the variant's transforms on `train` and applies them; SMOTE touches
/// only the training partition.
pub fn prepare(variant: Variant, name: &str, train: &LabeledDataset, test: &LabeledDataset, smote: SmoteConfig) -> Result<Prepared> {
    let mut train = train.clone();
    let mut test = test.clone();
    let mut log = Vec::new();
    if variant.normalizes() {
        let stats = transforms::minmax_fit(&train.features);
        train = train.with_features(transforms::minmax_apply(&train.features, &stats)?)?;
        test = test.with_features(transforms::minmax_apply(&test.features, &stats)?)?;
        log.push(format!("{name}: minmax fitted on {} train rows x {} columns", train.len(), train.features.cols()));
        let pca = transforms::pca_fit(&train.features)?;
        train = train.with_features(transforms::pca_apply(&train.features, &pca)?)?;
        test = test.with_features(transforms::pca_apply(&test.features, &pca)?)?;
        log.push(format!("{name}: pca fitted on {} train rows, {} -> {} components", train.len(), pca.input_dim(), pca.output_dim()));
    }
    if variant.oversamples() {
        let before = train.class_counts();
        train = transforms::smote_oversample(&train, &smote)?;
        log.push(format!("{name}: smote k={} on train, class counts {:?} -> {:?}", smote.k_neighbors, before, train.class_counts()));
    }
    Ok(Prepared { train, test, log })
}

/// A family tuned on a training partition, refitted on all of it and scored
/// on the test partition.
#[derive(Debug, Clone)]
pub struct TunedExperiment {
    pub grid: GridSpec,
    pub best: ClassifierSpec,
    pub trials: Vec<TrialResult>,
    pub cv_mean: f64,
    pub model: FittedModel,
    pub test_predictions: Vec<usize>,
    pub test_probabilities: Vec<Vec<f64>>,
    pub test_accuracy: f64,
}

pub fn tune_and_test(train: &LabeledDataset, test: &LabeledDataset, grid: &GridSpec, search: &SearchOptions) -> Result<TunedExperiment> {
    let (best, trials) = hpo::grid_search_with(train, grid, search)?;
    let cv_mean = trials[hpo::best_trial(&trials).expect("nonempty")].mean;
    let model = classifiers::fit(&best, train)?;
    let test_probabilities = model.predict_proba(&test.features)?;
    let test_predictions: Vec<usize> = test_probabilities.iter().map(|p| argmax(p)).collect();
    let test_accuracy = accuracy(&test_predictions, &test.labels);
    Ok(TunedExperiment { grid: grid.clone(), best, trials, cv_mean, model, test_predictions, test_probabilities, test_accuracy })
}

/// One reported accuracy and the file it can be recomputed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub stage: String,
    pub row: String,
    pub column: String,
    pub hyperparameters: Vec<String>,
    pub accuracy: f64,
    /// Relative to the output directory.
    pub predictions: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub variant: Variant,
    pub folds: usize,
    pub k_top: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub extractors: Vec<String>,
    /// Tuned cross-validation accuracy on the training partition.
    pub evaluation: EvaluationTable,
    pub selection: Selection,
    /// Test accuracy of each fusion candidate under each family.
    pub fusion: EvaluationTable,
    pub vote_families: Vec<Family>,
    /// Test accuracy of each classifier combination.
    pub vote: Option<EvaluationTable>,
    pub experiments: Vec<ExperimentRecord>,
    pub transform_log: Vec<String>,
}

impl RunReport {
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "variant {} seed {} folds {} k_top {}", self.variant, self.seed, self.folds, self.k_top);
        let _ = writeln!(out, "{} extractors, {} train rows, {} test rows", self.extractors.len(), self.train_rows, self.test_rows);
        let _ = writeln!(out, "\nselection:");
        out.push_str(&self.selection.format_trace());
        let best = |t: &EvaluationTable| {
            let mut b: Option<(f64, usize, usize)> = None;
            for (i, row) in t.cells.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    if b.is_none_or(|(bv, _, _)| v > bv) {
                        b = Some((v, i, j));
                    }
                }
            }
            b.map(|(v, i, j)| format!("{} / {}: {v:.6}", t.extractors[i], t.columns[j]))
        };
        if let Some(line) = best(&self.fusion) {
            let _ = writeln!(out, "\nbest fusion: {line}");
        }
        let fams: Vec<&str> = self.vote_families.iter().map(|f| f.name()).collect();
        let _ = writeln!(out, "vote families: {}", fams.join(", "));
        if let Some(line) = self.vote.as_ref().and_then(best) {
            let _ = writeln!(out, "best vote: {line}");
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || "_-+.".contains(c) { c } else { '_' }).collect()
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn prediction_csv(rows: &[usize], truth: &[usize], predicted: &[usize], ds: &LabeledDataset) -> String {
    let mut out = String::from("index,truth,predicted\n");
    for ((r, &t), &p) in rows.iter().zip(truth).zip(predicted) {
        let _ = writeln!(out, "{r},{},{}", ds.raw_label(t), ds.raw_label(p));
    }
    out
}

/// Recomputes an accuracy from a persisted prediction file: the plain hit
/// rate, or the mean of per-fold hit rates when a `fold` column is present.
pub fn accuracy_from_predictions(path: &Path) -> Result<f64> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| hpo::csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| hpo::csv_error(path, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format { path: path.into(), reason: format!("missing column {name}") })
    };
    let (t, p) = (col("truth")?, col("predicted")?);
    let fold = headers.iter().position(|h| h == "fold");
    let mut tallies: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| hpo::csv_error(path, e))?;
        let key = fold.map_or(String::new(), |f| rec[f].to_string());
        let e = tallies.entry(key).or_default();
        e.0 += usize::from(rec[t] == rec[p]);
        e.1 += 1;
    }
    let mut keys: Vec<&String> = tallies.keys().collect();
    keys.sort_by_key(|k| k.parse::<usize>().unwrap_or(0));
    let accs: Vec<f64> = keys.iter().map(|k| tallies[*k].0 as f64 / tallies[*k].1 as f64).collect();
    Ok(hpo::mean_std(&accs).0)
}

/// Loaded feature sets split once into shared train and test partitions.
pub struct Workspace {
    pub cfg: RunConfig,
    pub sets: Vec<LabeledDataset>,
    pub train: Vec<LabeledDataset>,
    pub test: Vec<LabeledDataset>,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    grids: BTreeMap<Family, GridSpec>,
}

impl Workspace {
    pub fn load(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        if !cfg.features_dir.is_dir() {
            return Err(Error::Config(format!("features_dir {} does not exist", cfg.features_dir.display())));
        }
        if let Some(l) = cfg.labels.as_ref().filter(|l| !l.is_file()) {
            return Err(Error::Config(format!("labels file {} does not exist", l.display())));
        }
        let sets = load_feature_sets(&cfg.features_dir, cfg.labels.as_deref())?;
        Self::from_sets(cfg, sets)
    }

    pub fn from_sets(cfg: RunConfig, sets: Vec<LabeledDataset>) -> Result<Self> {
        if sets.len() < cfg.k_top {
            return Err(Error::Config(format!("{} feature sets found, k_top = {} needs at least that many", sets.len(), cfg.k_top)));
        }
        let first = &sets[0];
        let spec = SplitSpec { train_fraction: cfg.train_fraction, seed: cfg.seed, stratified: true };
        let (train_rows, test_rows) = data::split_indices(&first.labels, first.class_count, &spec)?;
        let train = sets.iter().map(|s| s.subset(&train_rows)).collect();
        let test = sets.iter().map(|s| s.subset(&test_rows)).collect();
        let grids = cfg
            .families
            .iter()
            .map(|&f| Ok((f, cfg.grid_for(f, first.class_count)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self { cfg, sets, train, test, train_rows, test_rows, grids })
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.cfg.output_dir.join(rel)
    }

    fn index_of(&self, id: &str) -> Result<usize> {
        self.sets
            .iter()
            .position(|s| s.source_tag == id)
            .ok_or_else(|| Error::Selection(format!("unknown extractor {id}")))
    }

    /// Tuned cross-validation accuracy of every family on every training set.
    /// Writes `evaluation.csv`, the trials and the out-of-fold predictions of
    /// every winning configuration.
    pub fn evaluate(&self, records: &mut Vec<ExperimentRecord>) -> Result<EvaluationTable> {
        let opts = EvalOptions { folds: self.cfg.folds, seed: self.cfg.seed, preset: self.cfg.grid, exec: self.cfg.exec };
        let (table, outcomes) = ensemble::evaluate_with_grids(&self.train, &self.cfg.families, &opts, &|f, _| self.grids[&f].clone())?;
        let folds: Vec<Vec<usize>> = {
            let t = &self.train[0];
            hpo::stratified_folds(&t.labels, t.class_count, self.cfg.folds, self.cfg.seed)?
        };
        let persisted = try_map_indexed(outcomes.len(), self.cfg.exec, |c| self.persist_cell(&outcomes[c], &folds))?;
        records.extend(persisted);
        table.write_csv(&self.out("evaluation.csv"))?;
        Ok(table)
    }

    fn persist_cell(&self, cell: &CellOutcome, folds: &[Vec<usize>]) -> Result<ExperimentRecord> {
        let set = &self.train[self.index_of(&cell.extractor)?];
        let dir = format!("{}/{}", file_stem(&cell.extractor), file_stem(cell.family.name()));
        let trials_path = self.out(&format!("trials/evaluation/{dir}.csv"));
        ensure_parent(&trials_path)?;
        hpo::write_trials_csv(&trials_path, &cell.grid, &cell.trials)?;
        let preds = hpo::fold_predictions(set, &cell.best, folds)?;
        let mut text = String::from("fold,index,truth,predicted\n");
        let mut accs = Vec::new();
        for (f, (test, pred)) in folds.iter().zip(&preds).enumerate() {
            let truth: Vec<usize> = test.iter().map(|&i| set.labels[i]).collect();
            accs.push(accuracy(pred, &truth));
            for ((&i, &t), &p) in test.iter().zip(&truth).zip(pred) {
                let _ = writeln!(text, "{f},{},{},{}", self.train_rows[i], set.raw_label(t), set.raw_label(p));
            }
        }
        let acc = hpo::mean_std(&accs).0;
        if acc != cell.best_trial().mean {
            return Err(Error::Consistency(format!(
                "refitting {} on {} gave {acc}, search reported {}",
                cell.family,
                cell.extractor,
                cell.best_trial().mean
            )));
        }
        let rel = format!("predictions/evaluation/{dir}.csv");
        write_text(&self.out(&rel), &text)?;
        Ok(ExperimentRecord {
            stage: "evaluation".into(),
            row: cell.extractor.clone(),
            column: cell.family.name().into(),
            hyperparameters: vec![cell.best.describe()],
            accuracy: acc,
            predictions: rel,
        })
    }

    fn smote(&self) -> SmoteConfig {
        SmoteConfig { k_neighbors: self.cfg.smote_k, seed: self.cfg.seed }
    }

    /// Fuses the sets at `indices` (train and test separately) and applies the
    /// variant.
    pub fn fused(&self, indices: &[usize]) -> Result<(String, Prepared)> {
        let name = indices.iter().map(|&i| self.sets[i].source_tag.as_str()).collect::<Vec<_>>().join("+");
        let pick = |parts: &[LabeledDataset]| ensemble::fuse(&indices.iter().map(|&i| &parts[i]).collect::<Vec<_>>());
        let (mut train, mut test) = (pick(&self.train)?, pick(&self.test)?);
        train.source_tag = name.clone();
        test.source_tag = name.clone();
        let prepared = prepare(self.cfg.variant, &name, &train, &test, self.smote())?;
        Ok((name, prepared))
    }

    /// Tunes `families` on every prepared candidate, in parallel over
    /// candidate and family.
    fn tune_candidates(&self, candidates: &[(String, Prepared)], families: &[Family]) -> Result<Vec<TunedExperiment>> {
        let nf = families.len();
        let search = self.cfg.search();
        try_map_indexed(candidates.len() * nf, self.cfg.exec, |t| {
            let (name, p) = &candidates[t / nf];
            let family = families[t % nf];
            tune_and_test(&p.train, &p.test, &self.grids[&family], &search).map_err(|e| e.context(format!("tuning {family} on {name}")))
        })
    }

    fn persist_test_experiment(&self, stage: &str, row: &str, column: &str, hyper: Vec<String>, predicted: &[usize]) -> Result<ExperimentRecord> {
        let set = &self.test[0];
        let rel = format!("predictions/{stage}/{}/{}.csv", file_stem(row), file_stem(column));
        write_text(&self.out(&rel), &prediction_csv(&self.test_rows, &set.labels, predicted, set))?;
        Ok(ExperimentRecord {
            stage: stage.into(),
            row: row.into(),
            column: column.into(),
            hyperparameters: hyper,
            accuracy: accuracy(predicted, &set.labels),
            predictions: rel,
        })
    }

    fn persist_trials(&self, stage: &str, row: &str, family: Family, e: &TunedExperiment) -> Result<()> {
        let path = self.out(&format!("trials/{stage}/{}/{}.csv", file_stem(row), file_stem(family.name())));
        ensure_parent(&path)?;
        hpo::write_trials_csv(&path, &e.grid, &e.trials)
    }

    /// Runs every stage and writes the full report.
    pub fn run(&self) -> Result<(RunReport, Timings)> {
        let mut timings = Timings::default();
        let mut records = Vec::new();
        let mut log = Vec::new();
        std::fs::create_dir_all(&self.cfg.output_dir).map_err(|e| Error::io(&self.cfg.output_dir, e))?;
        write_text(&self.out("config.txt"), &self.cfg.to_text())?;

        let clock = Instant::now();
        let evaluation = self.evaluate(&mut records)?;
        timings.stages.push(("evaluation".into(), clock.elapsed().as_secs_f64()));

        let selection = select_top_k(&evaluation, self.cfg.k_top, &self.cfg.family_rule())?;
        write_text(&self.out("selection.txt"), &selection.format_trace())?;
        let selected = selection.ids.iter().map(|id| self.index_of(id)).collect::<Result<Vec<_>>>()?;

        let clock = Instant::now();
        let candidates = fusion_subsets(selected.len())
            .iter()
            .map(|subset| self.fused(&subset.iter().map(|&s| selected[s]).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        candidates.iter().for_each(|(_, p)| log.extend(p.log.iter().cloned()));
        let families = &self.cfg.families;
        let fusion_runs = self.tune_candidates(&candidates, families)?;
        let nf = families.len();
        let mut fusion_cells = Vec::new();
        for (c, (name, _)) in candidates.iter().enumerate() {
            let mut row = Vec::new();
            for (f, &family) in families.iter().enumerate() {
                let e = &fusion_runs[c * nf + f];
                self.persist_trials("fusion", name, family, e)?;
                let rec = self.persist_test_experiment("fusion", name, family.name(), vec![e.best.describe()], &e.test_predictions)?;
                row.push(rec.accuracy);
                records.push(rec);
            }
            fusion_cells.push(row);
        }
        let fusion = EvaluationTable::new(
            candidates.iter().map(|(n, _)| n.clone()).collect(),
            families.iter().map(|f| f.name().to_string()).collect(),
            fusion_cells,
        )?;
        fusion.write_csv(&self.out("fusion.csv"))?;
        timings.stages.push(("fusion".into(), clock.elapsed().as_secs_f64()));

        let clock = Instant::now();
        let vote_families = top_families(&evaluation, 3.min(families.len()))?;
        let vote = if vote_families.len() >= 2 {
            Some(self.vote_stage(&evaluation, &candidates, &fusion_runs, &vote_families, &mut records, &mut log)?)
        } else {
            None
        };
        timings.stages.push(("vote".into(), clock.elapsed().as_secs_f64()));

        write_text(&self.out("transforms.log"), &log.iter().map(|l| format!("{l}\n")).collect::<String>())?;
        let report = RunReport {
            seed: self.cfg.seed,
            variant: self.cfg.variant,
            folds: self.cfg.folds,
            k_top: self.cfg.k_top,
            train_rows: self.train_rows.len(),
            test_rows: self.test_rows.len(),
            extractors: self.sets.iter().map(|s| s.source_tag.clone()).collect(),
            evaluation,
            selection,
            fusion,
            vote_families,
            vote,
            experiments: records,
            transform_log: log,
        };
        let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))?;
        write_text(&self.out("report.json"), &json)?;
        write_text(&self.out("summary.txt"), &report.summary())?;
        let timing_json = serde_json::to_string_pretty(&timings).map_err(|e| Error::Data(e.to_string()))?;
        write_text(&self.out("timing.json"), &timing_json)?;
        if self.cfg.plot {
            write_text(&self.out("evaluation.dat"), &report.evaluation.to_dat_string())?;
            write_text(&self.out("fusion.dat"), &report.fusion.to_dat_string())?;
            if let Some(v) = &report.vote {
                write_text(&self.out("vote.dat"), &v.to_dat_string())?;
            }
        }
        Ok((report, timings))
    }

    /// Hard-majority votes over the top families: every pair and, with three
    /// families, the triple. Rows are the top individually ranked sets
    /// followed by the fusion candidates.
    fn vote_stage(
        &self,
        evaluation: &EvaluationTable,
        candidates: &[(String, Prepared)],
        fusion_runs: &[TunedExperiment],
        vote_families: &[Family],
        records: &mut Vec<ExperimentRecord>,
        log: &mut Vec<String>,
    ) -> Result<EvaluationTable> {
        let top: Vec<usize> = rank_rows(evaluation).into_iter().take(self.cfg.top_extractors).collect();
        let singles = top
            .iter()
            .map(|&r| {
                let id = &evaluation.extractors[r];
                let i = self.index_of(id)?;
                Ok((id.clone(), prepare(self.cfg.variant, id, &self.train[i], &self.test[i], self.smote())?))
            })
            .collect::<Result<Vec<_>>>()?;
        singles.iter().for_each(|(_, p)| log.extend(p.log.iter().cloned()));
        let single_runs = self.tune_candidates(&singles, vote_families)?;

        let nv = vote_families.len();
        let nf = self.cfg.families.len();
        let mut rows: Vec<(String, Vec<&TunedExperiment>)> = Vec::new();
        for (s, (name, _)) in singles.iter().enumerate() {
            let runs: Vec<&TunedExperiment> = (0..nv).map(|v| &single_runs[s * nv + v]).collect();
            for (v, e) in runs.iter().enumerate() {
                self.persist_trials("vote", name, vote_families[v], e)?;
            }
            rows.push((name.clone(), runs));
        }
        for (c, (name, _)) in candidates.iter().enumerate() {
            let runs = vote_families
                .iter()
                .map(|f| &fusion_runs[c * nf + self.cfg.families.iter().position(|g| g == f).expect("vote family is configured")])
                .collect();
            rows.push((name.clone(), runs));
        }

        let combos: Vec<Vec<usize>> = fusion_subsets(nv);
        let columns: Vec<String> =
            combos.iter().map(|c| c.iter().map(|&v| vote_families[v].name()).collect::<Vec<_>>().join("+")).collect();
        let class_count = self.test[0].class_count;
        let mut cells = Vec::new();
        for (name, runs) in &rows {
            let mut row = Vec::new();
            for (combo, column) in combos.iter().zip(&columns) {
                let preds: Vec<Vec<usize>> = combo.iter().map(|&v| runs[v].test_predictions.clone()).collect();
                let probs: Vec<Vec<Vec<f64>>> = combo.iter().map(|&v| runs[v].test_probabilities.clone()).collect();
                let voted = vote_labels(&preds, &probs, class_count);
                let hyper = combo.iter().map(|&v| runs[v].best.describe()).collect();
                let rec = self.persist_test_experiment("vote", name, column, hyper, &voted)?;
                row.push(rec.accuracy);
                records.push(rec);
            }
            cells.push(row);
        }
        let table = EvaluationTable::new(rows.into_iter().map(|(n, _)| n).collect(), columns, cells)?;
        table.write_csv(&self.out("vote.csv"))?;
        Ok(table)
    }
}

pub fn run_pipeline(cfg: RunConfig) -> Result<(RunReport, Timings)> {
    Workspace::load(cfg)?.run()
}

/// Re-runs top-k selection on a saved evaluation table.
pub fn replay_selection(table_path: &Path, k: usize, diversity: bool) -> Result<Selection> {
    let table = EvaluationTable::read_csv(table_path)?;
    let rule = if diversity { FamilyRule::standard() } else { FamilyRule::identity() };
    select_top_k(&table, k, &rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_text() {
        let text = "features_dir = feats\nvariant = norm_pca_smote\nk_top = 2\nfamilies = KNN, SVM_RBF\ngrid.KNN.n_neighbors = 1;3\nplot = true\n";
        let cfg = RunConfig::parse(text, Path::new("/base")).unwrap();
        assert_eq!(cfg.features_dir, PathBuf::from("/base/feats"));
        assert_eq!(cfg.variant, Variant::NormPcaSmote);
        assert_eq!(cfg.families, vec![Family::Knn, Family::SvmRbf]);
        assert_eq!(cfg.grid_for(Family::Knn, 2).unwrap().axes[0].1.len(), 2);
        let again = RunConfig::parse(&cfg.to_text(), Path::new("/elsewhere")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let unknown = RunConfig::parse("features_dir = x\nsede = 3\n", Path::new(".")).unwrap_err();
        assert!(unknown.is_config_error() && unknown.to_string().contains("line 2"));
        let dup = RunConfig::parse("features_dir = x\nseed = 1\nseed = 2\n", Path::new(".")).unwrap_err();
        assert!(dup.is_config_error());
        let bad_value = RunConfig::parse("features_dir = x\ngrid.KNN.weights = sideways\n", Path::new(".")).unwrap_err();
        assert!(bad_value.is_config_error());
    }

    #[test]
    fn variant_flags_match_log_lines() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i * i % 7) as f64, 1.0 + (i % 3) as f64]).collect();
        let raw: Vec<i64> = (0..40).map(|i| i64::from(i % 4 == 0)).collect();
        let ds = LabeledDataset::from_raw_labels(data::FeatureMatrix::from_rows(&rows).unwrap(), &raw, "t").unwrap();
        let (train, test) = data::split(&ds, &SplitSpec::default()).unwrap();
        for v in Variant::ALL {
            let p = prepare(v, "t", &train, &test, SmoteConfig::default()).unwrap();
            let expected = 2 * usize::from(v.normalizes()) + usize::from(v.oversamples());
            assert_eq!(p.log.len(), expected, "{v}");
            assert_eq!(p.test.len(), test.len());
        }
    }
}
