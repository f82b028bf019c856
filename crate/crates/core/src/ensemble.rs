//! Extractor evaluation, top-k feature-set selection with a family diversity
//! rule, feature fusion by concatenation, and majority voting.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifiers::tree::argmax;
use crate::classifiers::{ClassifierSpec, Family, FittedModel};
use crate::data::{concat_columns, FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};
use crate::hpo::{self, GridPreset, GridSpec, SearchOptions, TrialResult};
use crate::par::{try_map_indexed, Execution};

/// Extractors (rows) by classifiers (columns) accuracy matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationTable {
    pub extractors: Vec<String>,
    pub columns: Vec<String>,
    pub cells: Vec<Vec<f64>>,
}

impl EvaluationTable {
    pub fn new(extractors: Vec<String>, columns: Vec<String>, cells: Vec<Vec<f64>>) -> Result<Self> {
        if cells.len() != extractors.len() {
            return Err(Error::shape(format!("{} rows", extractors.len()), format!("{} rows", cells.len())));
        }
        for (id, row) in extractors.iter().zip(&cells) {
            if row.len() != columns.len() {
                return Err(Error::shape(format!("{} cells in row {id}", columns.len()), row.len()));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Data(format!("accuracy {v} in row {id} is outside [0, 1]")));
            }
        }
        Ok(Self { extractors, columns, cells })
    }

    pub fn row_mean(&self, i: usize) -> f64 {
        hpo::mean_std(&self.cells[i]).0
    }

    /// Population standard deviation of a row.
    pub fn row_std(&self, i: usize) -> f64 {
        hpo::mean_std(&self.cells[i]).1
    }

    pub fn column_mean(&self, j: usize) -> f64 {
        self.cells.iter().map(|r| r[j]).sum::<f64>() / self.cells.len() as f64
    }

    pub fn row_index(&self, id: &str) -> Option<usize> {
        self.extractors.iter().position(|e| e == id)
    }

    /// Parses the tabular layout: a header naming the classifier columns,
    /// one row per extractor, an optional trailing `Average` column and an
    /// optional `Average` footer row. Averages are recomputed, never read.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut header: Option<Vec<String>> = None;
        let mut has_average = false;
        let mut extractors = Vec::new();
        let mut cells = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                reason: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            if record.iter().all(str::is_empty) {
                continue;
            }
            let fields: Vec<&str> = record.iter().collect();
            let Some(cols) = &header else {
                let mut cols: Vec<String> = fields[1..].iter().map(|s| s.to_string()).collect();
                if cols.last().is_some_and(|c| c.eq_ignore_ascii_case("average")) {
                    cols.pop();
                    has_average = true;
                }
                if cols.is_empty() {
                    return Err(Error::Parse { line, reason: "header names no classifier columns".into() });
                }
                header = Some(cols);
                continue;
            };
            if fields[0].eq_ignore_ascii_case("average") {
                continue;
            }
            let expected = cols.len() + usize::from(has_average);
            let given = fields.len() - 1;
            if given != expected && !(has_average && given == cols.len()) {
                return Err(Error::Parse {
                    line,
                    reason: format!("row {} has {given} values, expected {expected}", fields[0]),
                });
            }
            let row = fields[1..=cols.len()]
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Parse { line, reason: format!("{s:?} is not a number") })
                        .and_then(|v| {
                            if (0.0..=1.0).contains(&v) {
                                Ok(v)
                            } else {
                                Err(Error::Parse { line, reason: format!("accuracy {v} outside [0, 1]") })
                            }
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            extractors.push(fields[0].to_string());
            cells.push(row);
        }
        let columns = header.ok_or_else(|| Error::Parse { line: 1, reason: "empty table".into() })?;
        if extractors.is_empty() {
            return Err(Error::Parse { line: 2, reason: "table has no extractor rows".into() });
        }
        Self::new(extractors, columns, cells)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text).map_err(|e| e.context(path.display().to_string()))
    }

    /// Writes the tabular layout with recomputed row and column averages.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Model,{},Average", self.columns.join(","));
        for (i, id) in self.extractors.iter().enumerate() {
            let cells: Vec<String> = self.cells[i].iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{id},{},{}", cells.join(","), self.row_mean(i));
        }
        let means: Vec<String> = (0..self.columns.len()).map(|j| self.column_mean(j).to_string()).collect();
        let _ = writeln!(out, "Average,{},", means.join(","));
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Whitespace-separated columns for plotting tools.
    pub fn to_dat_string(&self) -> String {
        let mut out = format!("# row {} mean std\n", self.columns.join(" "));
        for (i, id) in self.extractors.iter().enumerate() {
            let cells: Vec<String> = self.cells[i].iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{id} {} {} {}", cells.join(" "), self.row_mean(i), self.row_std(i));
        }
        out
    }
}

/// Maps extractor ids to architecture family keys.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FamilyRule {
    overrides: BTreeMap<String, String>,
    identity: bool,
}

impl FamilyRule {
    /// Derived keys: transformers keep architecture, size and patch
    /// (`vit_small_patch32_384` -> `vit_small_patch32`); everything else keeps
    /// its leading alphabetic stem (`resnet101` -> `resnet`).
    pub fn standard() -> Self {
        Self::default()
    }

    /// Every id is its own family, which disables the diversity rule.
    pub fn identity() -> Self {
        Self { overrides: BTreeMap::new(), identity: true }
    }

    pub fn with_override(mut self, id: &str, key: &str) -> Self {
        self.overrides.insert(id.to_string(), key.to_string());
        self
    }

    pub fn key(&self, id: &str) -> String {
        if let Some(k) = self.overrides.get(id) {
            return k.clone();
        }
        if self.identity {
            return id.to_string();
        }
        family_key(id)
    }
}

pub fn family_key(id: &str) -> String {
    let lower = id.to_ascii_lowercase();
    let tokens: Vec<&str> = lower.split('_').collect();
    let transformer = tokens[0] == "vit" || tokens[0].starts_with("deit");
    if transformer && tokens.len() >= 2 {
        let mut key = vec![tokens[0], tokens[1]];
        if let Some(p) = tokens.iter().skip(2).find(|t| t.starts_with("patch")) {
            key.push(p);
        }
        return key.join("_");
    }
    let stem: String = lower.chars().take_while(|c| c.is_ascii_alphabetic()).collect();
    if stem.is_empty() {
        lower
    } else {
        stem
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RankDecision {
    Selected,
    /// Shares a family key with an already selected id.
    Skipped { conflicts_with: String },
    NotReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub id: String,
    pub mean: f64,
    pub std: f64,
    pub family: String,
    pub decision: RankDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Selected ids in rank order.
    pub ids: Vec<String>,
    /// Every row in rank order.
    pub trace: Vec<RankEntry>,
}

impl Selection {
    pub fn format_trace(&self) -> String {
        let mut out = String::new();
        for (rank, e) in self.trace.iter().enumerate() {
            let what = match &e.decision {
                RankDecision::Selected => "selected".to_string(),
                RankDecision::Skipped { conflicts_with } => format!("skipped (family {} taken by {conflicts_with})", e.family),
                RankDecision::NotReached => "-".to_string(),
            };
            let _ = writeln!(out, "{:>3} {:<32} mean={:.6} std={:.6} {what}", rank + 1, e.id, e.mean, e.std);
        }
        out
    }
}

/// Row indices ranked by mean (descending), then std (ascending), then table
/// order.
pub fn rank_rows(table: &EvaluationTable) -> Vec<usize> {
    let stats: Vec<(f64, f64)> = (0..table.extractors.len()).map(|i| (table.row_mean(i), table.row_std(i))).collect();
    let mut order: Vec<usize> = (0..stats.len()).collect();
    order.sort_by(|&a, &b| {
        stats[b].0.total_cmp(&stats[a].0).then(stats[a].1.total_cmp(&stats[b].1)).then(a.cmp(&b))
    });
    order
}

pub fn select_top_k(table: &EvaluationTable, k: usize, rule: &FamilyRule) -> Result<Selection> {
    if k == 0 || table.extractors.len() < k {
        return Err(Error::Selection(format!("cannot select {k} of {} extractors", table.extractors.len())));
    }
    let mut taken: BTreeMap<String, String> = BTreeMap::new();
    let mut ids = Vec::new();
    let mut trace = Vec::new();
    for i in rank_rows(table) {
        let id = table.extractors[i].clone();
        let family = rule.key(&id);
        let decision = if ids.len() == k {
            RankDecision::NotReached
        } else if let Some(owner) = taken.get(&family) {
            RankDecision::Skipped { conflicts_with: owner.clone() }
        } else {
            taken.insert(family.clone(), id.clone());
            ids.push(id.clone());
            RankDecision::Selected
        };
        trace.push(RankEntry { id, mean: table.row_mean(i), std: table.row_std(i), family, decision });
    }
    if ids.len() < k {
        return Err(Error::Selection(format!("only {} distinct families among {} extractors, need {k}", ids.len(), table.extractors.len())));
    }
    Ok(Selection { ids, trace })
}

/// Index subsets of size two and up, by size then lexicographically.
pub fn fusion_subsets(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for size in 2..=n {
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            out.push(combo.clone());
            let Some(pos) = (0..size).rev().find(|&p| combo[p] < n - size + p) else { break };
            combo[pos] += 1;
            for q in pos + 1..size {
                combo[q] = combo[q - 1] + 1;
            }
        }
    }
    out
}

/// Column-wise concatenation of the selected sets.
pub fn fuse(sets: &[&LabeledDataset]) -> Result<LabeledDataset> {
    let mut seen = HashSet::new();
    for s in sets {
        if !seen.insert(s.source_tag.as_str()) {
            return Err(Error::Selection(format!("feature set {} appears twice in one fusion", s.source_tag)));
        }
    }
    let owned: Vec<LabeledDataset> = sets.iter().map(|s| (*s).clone()).collect();
    concat_columns(&owned)
}

/// Every pairwise fusion followed by larger ones, ending with all sets.
pub fn fusion_candidates(sets: &[LabeledDataset]) -> Result<Vec<LabeledDataset>> {
    fusion_subsets(sets.len())
        .iter()
        .map(|idx| fuse(&idx.iter().map(|&i| &sets[i]).collect::<Vec<_>>()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub folds: usize,
    pub seed: u64,
    pub preset: GridPreset,
    pub exec: Execution,
}

/// Tuning outcome behind one table cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub extractor: String,
    pub family: Family,
    pub grid: GridSpec,
    pub best: ClassifierSpec,
    pub trials: Vec<TrialResult>,
}

impl CellOutcome {
    pub fn best_trial(&self) -> &TrialResult {
        &self.trials[hpo::best_trial(&self.trials).expect("nonempty")]
    }
}

/// Tuned cross-validation accuracy of every family on every set.
pub fn evaluate_feature_sets(
    sets: &[LabeledDataset],
    families: &[Family],
    opts: &EvalOptions,
) -> Result<(EvaluationTable, Vec<CellOutcome>)> {
    evaluate_with_grids(sets, families, opts, &|f, k| hpo::preset_grid(opts.preset, f, k))
}

pub fn evaluate_with_grids(
    sets: &[LabeledDataset],
    families: &[Family],
    opts: &EvalOptions,
    grid_for: &(dyn Fn(Family, usize) -> GridSpec + Sync),
) -> Result<(EvaluationTable, Vec<CellOutcome>)> {
    if sets.is_empty() || families.is_empty() {
        return Err(Error::Config("evaluation needs at least one feature set and one family".into()));
    }
    for s in &sets[1..] {
        if s.labels != sets[0].labels {
            return Err(Error::Alignment(format!("{} and {} carry different labels", sets[0].source_tag, s.source_tag)));
        }
    }
    let nf = families.len();
    let search = SearchOptions::new(opts.folds, opts.seed).with_execution(opts.exec);
    let outcomes = try_map_indexed(sets.len() * nf, opts.exec, |cell| {
        let (set, family) = (&sets[cell / nf], families[cell % nf]);
        let grid = grid_for(family, set.class_count);
        let (best, trials) = hpo::grid_search_with(set, &grid, &search)
            .map_err(|e| e.context(format!("evaluating {} with {family}", set.source_tag)))?;
        Ok(CellOutcome { extractor: set.source_tag.clone(), family, grid, best, trials })
    })?;
    let cells = outcomes.chunks(nf).map(|row| row.iter().map(|c| c.best_trial().mean).collect()).collect();
    let table = EvaluationTable::new(
        sets.iter().map(|s| s.source_tag.clone()).collect(),
        families.iter().map(|f| f.name().to_string()).collect(),
        cells,
    )?;
    Ok((table, outcomes))
}

/// Members of a hard-majority vote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteSpec {
    pub members: Vec<ClassifierSpec>,
}

impl VoteSpec {
    pub fn new(members: Vec<ClassifierSpec>) -> Result<Self> {
        if !(2..=3).contains(&members.len()) {
            return Err(Error::Config(format!("a vote needs 2 or 3 members, got {}", members.len())));
        }
        Ok(Self { members })
    }
}

/// Per sample: the modal label; among tied labels the one with the highest
/// mean probability; then the earliest member's prediction.
pub fn vote_labels(predictions: &[Vec<usize>], probabilities: &[Vec<Vec<f64>>], class_count: usize) -> Vec<usize> {
    let n = predictions.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            let mut counts = vec![0usize; class_count];
            predictions.iter().for_each(|p| counts[p[i]] += 1);
            let top = *counts.iter().max().expect("classes");
            let tied: Vec<usize> = (0..class_count).filter(|&c| counts[c] == top).collect();
            if tied.len() == 1 {
                return tied[0];
            }
            let mean_prob = |c: usize| probabilities.iter().map(|p| p[i][c]).sum::<f64>() / probabilities.len() as f64;
            let best = tied.iter().map(|&c| mean_prob(c)).fold(f64::NEG_INFINITY, f64::max);
            let still: Vec<usize> = tied.into_iter().filter(|&c| mean_prob(c) == best).collect();
            if still.len() == 1 {
                return still[0];
            }
            predictions.iter().map(|p| p[i]).find(|c| still.contains(c)).unwrap_or(still[0])
        })
        .collect()
}

pub fn vote_predict(members: &[FittedModel], x: &FeatureMatrix) -> Result<Vec<usize>> {
    let first = members.first().ok_or_else(|| Error::Config("a vote needs at least one member".into()))?;
    for m in members {
        if m.n_features != first.n_features || m.class_count != first.class_count {
            return Err(Error::shape(
                format!("{} features and {} classes", first.n_features, first.class_count),
                format!("{} features and {} classes", m.n_features, m.class_count),
            ));
        }
    }
    let probabilities = members.iter().map(|m| m.predict_proba(x)).collect::<Result<Vec<_>>>()?;
    let predictions: Vec<Vec<usize>> = probabilities.iter().map(|p| p.iter().map(|r| argmax(r)).collect()).collect();
    Ok(vote_labels(&predictions, &probabilities, first.class_count))
}

/// Families ranked by column mean (descending, then column order).
pub fn top_families(table: &EvaluationTable, n: usize) -> Result<Vec<Family>> {
    let mut order: Vec<usize> = (0..table.columns.len()).collect();
    order.sort_by(|&a, &b| table.column_mean(b).total_cmp(&table.column_mean(a)).then(a.cmp(&b)));
    order.into_iter().take(n).map(|j| table.columns[j].parse::<Family>()).collect()
}
