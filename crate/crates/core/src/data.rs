//! Numeric containers, labeled datasets, deterministic splitting, and the
//! FSET1 feature interchange format.
//!
//! An FSET1 file is an ASCII header line
//! `FSET1 <extractor_id> <rows> <cols> f32le\n` followed immediately by
//! `rows * cols` little-endian `f32` values in row-major order. Labels live in
//! a sibling text file `<stem>.labels`, one integer per line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `rows x cols` matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape("rows >= 1 and cols >= 1", format!("{rows}x{cols}")));
        }
        if values.len() != rows * cols {
            return Err(Error::shape(format!("{} values", rows * cols), values.len()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value {} at row {}, col {}",
                values[pos],
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::shape(format!("{cols} columns per row"), bad.len()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.cols)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }

    /// Rows at `indices`, in that order. Panics on out-of-range or empty index lists.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        assert!(!indices.is_empty(), "select_rows needs at least one index");
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix { rows: indices.len(), cols: self.cols, values }
    }

    /// Columns `start..end` as a new matrix.
    pub fn slice_columns(&self, start: usize, end: usize) -> Result<FeatureMatrix> {
        if start >= end || end > self.cols {
            return Err(Error::shape(format!("column range within 0..{}", self.cols), format!("{start}..{end}")));
        }
        let values = self.iter_rows().flat_map(|r| r[start..end].iter().copied()).collect();
        Ok(FeatureMatrix { rows: self.rows, cols: end - start, values })
    }

    pub(crate) fn from_raw_unchecked(rows: usize, cols: usize, values: Vec<f64>) -> FeatureMatrix {
        debug_assert_eq!(values.len(), rows * cols);
        FeatureMatrix { rows, cols, values }
    }
}

/// A feature matrix with dense class labels `0..class_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// Extractor id, or `+`-joined ids for a fused set.
    pub source_tag: String,
    /// Original label value for each dense class id, ascending.
    pub class_values: Vec<i64>,
}

impl LabeledDataset {
    /// Builds a dataset whose labels are already dense class ids. Every class
    /// `0..class_count` must occur.
    pub fn new(
        features: FeatureMatrix,
        labels: Vec<usize>,
        class_count: usize,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Consistency(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        let mut seen = vec![false; class_count];
        for (i, &l) in labels.iter().enumerate() {
            if l >= class_count {
                return Err(Error::Consistency(format!("label {l} at row {i} is not below class count {class_count}")));
            }
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Consistency(format!("class {missing} has no samples")));
        }
        Ok(Self {
            features,
            labels,
            class_count,
            source_tag: source_tag.into(),
            class_values: (0..class_count as i64).collect(),
        })
    }

    /// Builds a dataset from arbitrary integer labels, assigning dense ids by
    /// sorted label value.
    pub fn from_raw_labels(features: FeatureMatrix, raw: &[i64], source_tag: impl Into<String>) -> Result<Self> {
        let (labels, class_values) = encode_labels(raw);
        let mut ds = Self::new(features, labels, class_values.len(), source_tag)?;
        ds.class_values = class_values;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.labels, self.class_count)
    }

    /// Rows at `indices`. The result keeps the parent's class count even if some
    /// classes end up without samples.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            source_tag: self.source_tag.clone(),
            class_values: self.class_values.clone(),
        }
    }

    pub fn with_features(&self, features: FeatureMatrix) -> Result<LabeledDataset> {
        if features.rows() != self.len() {
            return Err(Error::shape(format!("{} rows", self.len()), features.rows()));
        }
        Ok(LabeledDataset { features, ..self.clone() })
    }

    pub fn raw_label(&self, class: usize) -> i64 {
        self.class_values[class]
    }
}

pub fn class_counts(labels: &[usize], class_count: usize) -> Vec<usize> {
    let mut counts = vec![0; class_count];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Maps arbitrary labels to dense ids in sorted value order.
pub fn encode_labels(raw: &[i64]) -> (Vec<usize>, Vec<i64>) {
    let mut values = raw.to_vec();
    values.sort_unstable();
    values.dedup();
    let labels = raw.iter().map(|v| values.binary_search(v).expect("value present")).collect();
    (labels, values)
}

/// Parameters of a train/test partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.8, seed: 42, stratified: true }
    }
}

/// Train and test row indices, each ascending.
pub fn split_indices(labels: &[usize], class_count: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {} outside (0, 1)", spec.train_fraction)));
    }
    let n = labels.len();
    let target = (spec.train_fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut in_train = vec![false; n];

    if spec.stratified {
        let counts = class_counts(labels, class_count);
        if let Some((class, &count)) = counts.iter().enumerate().find(|(_, &c)| c < 2) {
            return Err(Error::Split { class, count });
        }
        let mut quota: Vec<usize> =
            counts.iter().map(|&c| (spec.train_fraction * c as f64).floor() as usize).collect();
        let mut remainder = target.saturating_sub(quota.iter().sum());
        let mut by_size: Vec<usize> = (0..class_count).collect();
        by_size.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        for &c in &by_size {
            if remainder == 0 {
                break;
            }
            if quota[c] + 1 < counts[c] {
                quota[c] += 1;
                remainder -= 1;
            }
        }
        for class in 0..class_count {
            let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            members.shuffle(&mut rng);
            for &i in &members[..quota[class]] {
                in_train[i] = true;
            }
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for &i in &order[..target.min(n)] {
            in_train[i] = true;
        }
    }

    let train: Vec<usize> = (0..n).filter(|&i| in_train[i]).collect();
    let test: Vec<usize> = (0..n).filter(|&i| !in_train[i]).collect();
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!("split of {n} rows leaves an empty partition")));
    }
    Ok((train, test))
}

/// Deterministic train/test partition of a dataset.
pub fn split(ds: &LabeledDataset, spec: &SplitSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, test) = split_indices(&ds.labels, ds.class_count, spec)?;
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Column-wise concatenation of sample-aligned datasets.
pub fn concat_columns(sets: &[LabeledDataset]) -> Result<LabeledDataset> {
    let first = sets.first().ok_or_else(|| Error::Alignment("no datasets to concatenate".into()))?;
    for other in &sets[1..] {
        if other.len() != first.len() {
            return Err(Error::Alignment(format!(
                "{} has {} rows, {} has {}",
                other.source_tag,
                other.len(),
                first.source_tag,
                first.len()
            )));
        }
        if other.labels != first.labels || other.class_values != first.class_values {
            return Err(Error::Alignment(format!(
                "labels of {} differ from labels of {}",
                other.source_tag, first.source_tag
            )));
        }
    }
    let rows = first.len();
    let cols: usize = sets.iter().map(|s| s.features.cols()).sum();
    let mut values = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for s in sets {
            values.extend_from_slice(s.features.row(r));
        }
    }
    Ok(LabeledDataset {
        features: FeatureMatrix::from_raw_unchecked(rows, cols, values),
        labels: first.labels.clone(),
        class_count: first.class_count,
        source_tag: sets.iter().map(|s| s.source_tag.as_str()).collect::<Vec<_>>().join("+"),
        class_values: first.class_values.clone(),
    })
}

pub const FSET_MAGIC: &str = "FSET1";
pub const FSET_DTYPE: &str = "f32le";

/// Parsed FSET1 header line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSetHeader {
    pub extractor_id: String,
    pub rows: usize,
    pub cols: usize,
}

impl FeatureSetHeader {
    pub fn to_line(&self) -> String {
        format!("{FSET_MAGIC} {} {} {} {FSET_DTYPE}\n", self.extractor_id, self.rows, self.cols)
    }

    pub fn payload_len(&self) -> usize {
        self.rows * self.cols * 4
    }

    fn parse(line: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
        let tokens: Vec<&str> = line.split(' ').collect();
        if tokens.first() != Some(&FSET_MAGIC) {
            return Err(bad(format!("bad magic {:?}", tokens.first().unwrap_or(&""))));
        }
        if tokens.len() != 5 {
            return Err(bad(format!("header has {} fields, expected 5", tokens.len())));
        }
        if tokens[4] != FSET_DTYPE {
            return Err(bad(format!("unsupported dtype {:?}", tokens[4])));
        }
        let dim = |s: &str, what: &str| -> Result<usize> {
            match s.parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v),
                _ => Err(bad(format!("invalid {what} {s:?}"))),
            }
        };
        if tokens[1].is_empty() {
            return Err(bad("empty extractor id".into()));
        }
        Ok(Self { extractor_id: tokens[1].to_string(), rows: dim(tokens[2], "rows")?, cols: dim(tokens[3], "cols")? })
    }
}

/// `<stem>.labels` next to a feature file.
pub fn labels_path(features_path: &Path) -> PathBuf {
    features_path.with_extension("labels")
}

pub fn read_labels(path: &Path) -> Result<Vec<i64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<i64>().map_err(|_| Error::Parse {
                line: i + 1,
                reason: format!("{}: label {:?} is not an integer", path.display(), l.trim()),
            })
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: impl IntoIterator<Item = i64>) -> Result<()> {
    let mut out = String::new();
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads an FSET1 file and its sibling labels file.
pub fn load_feature_set(path: &Path) -> Result<LabeledDataset> {
    load_feature_set_with_labels(path, &labels_path(path))
}

pub fn load_feature_set_with_labels(path: &Path, labels_file: &Path) -> Result<LabeledDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let newline = bytes
        .iter()
        .take(4096)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format { path: path.to_path_buf(), reason: "missing header line".into() })?;
    let line = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| Error::Format { path: path.to_path_buf(), reason: "header is not ASCII".into() })?;
    let header = FeatureSetHeader::parse(line, path)?;
    let payload = &bytes[newline + 1..];
    if payload.len() != header.payload_len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("payload is {} bytes, header declares {}", payload.len(), header.payload_len()),
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let raw = read_labels(labels_file)?;
    if raw.len() != header.rows {
        return Err(Error::Consistency(format!(
            "{} has {} labels for {} rows",
            labels_file.display(),
            raw.len(),
            header.rows
        )));
    }
    let features = FeatureMatrix::new(header.rows, header.cols, values)
        .map_err(|e| e.context(format!("{}", path.display())))?;
    LabeledDataset::from_raw_labels(features, &raw, header.extractor_id)
}

/// Writes `ds` as FSET1 plus its sibling labels file. Values are narrowed to `f32`.
pub fn save_feature_set(path: &Path, ds: &LabeledDataset) -> Result<()> {
    if ds.source_tag.is_empty() || ds.source_tag.contains(char::is_whitespace) {
        return Err(Error::Config(format!("extractor id {:?} must be non-empty without whitespace", ds.source_tag)));
    }
    let header = FeatureSetHeader {
        extractor_id: ds.source_tag.clone(),
        rows: ds.features.rows(),
        cols: ds.features.cols(),
    };
    let mut buf = Vec::with_capacity(64 + header.payload_len());
    buf.extend_from_slice(header.to_line().as_bytes());
    for &v in ds.features.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    write_labels(&labels_path(path), ds.labels.iter().map(|&l| ds.raw_label(l)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fset(dir: &Path, name: &str, header: &str, values: &[f32], labels: &str) -> PathBuf {
        let path = dir.join(format!("{name}.fset"));
        let mut bytes = header.as_bytes().to_vec();
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, bytes).unwrap();
        fs::write(dir.join(format!("{name}.labels")), labels).unwrap();
        path
    }

    fn toy(labels: Vec<usize>, k: usize) -> LabeledDataset {
        let n = labels.len();
        let fm = FeatureMatrix::new(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        LabeledDataset::new(fm, labels, k, "toy").unwrap()
    }

    #[test]
    fn loads_small_feature_set() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_fset(dir.path(), "a", "FSET1 resnet50 4 2 f32le\n", &[1., 2., 3., 4., 5., 6., 7., 8.], "0\n0\n1\n1\n");
        let ds = load_feature_set(&p).unwrap();
        assert_eq!((ds.features.rows(), ds.features.cols(), ds.class_count), (4, 2, 2));
        assert_eq!(ds.source_tag, "resnet50");
        assert_eq!(ds.features.row(3), &[7.0, 8.0]);
    }

    #[test]
    fn short_labels_file_is_consistency_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_fset(dir.path(), "a", "FSET1 x 4 2 f32le\n", &[0.0; 8], "0\n0\n1\n");
        assert!(matches!(load_feature_set(&p), Err(Error::Consistency(_))));
    }

    #[test]
    fn nan_payload_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut vals = [0.0f32; 8];
        vals[5] = f32::NAN;
        let p = write_fset(dir.path(), "a", "FSET1 x 4 2 f32le\n", &vals, "0\n0\n1\n1\n");
        let err = load_feature_set(&p).unwrap_err();
        assert!(matches!(err.root(), Error::Data(_)), "{err}");
    }

    #[test]
    fn bad_magic_and_truncated_payload_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_fset(dir.path(), "a", "FSET2 x 4 2 f32le\n", &[0.0; 8], "0\n0\n1\n1\n");
        assert!(matches!(load_feature_set(&p), Err(Error::Format { .. })));
        let p = write_fset(dir.path(), "b", "FSET1 x 4 2 f32le\n", &[0.0; 7], "0\n0\n1\n1\n");
        assert!(matches!(load_feature_set(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn raw_labels_are_densely_encoded() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_fset(dir.path(), "a", "FSET1 x 3 1 f32le\n", &[0.0; 3], "7\n-2\n7\n");
        let ds = load_feature_set(&p).unwrap();
        assert_eq!(ds.labels, vec![1, 0, 1]);
        assert_eq!(ds.class_values, vec![-2, 7]);
    }

    #[test]
    fn table1_small_split_sizes() {
        let mut labels = vec![1; 155];
        labels.extend(vec![0; 98]);
        let ds = toy(labels, 2);
        let (train, test) = split(&ds, &SplitSpec { train_fraction: 0.8, seed: 7, stratified: true }).unwrap();
        assert_eq!((train.len(), test.len()), (202, 51));
        assert_eq!(train.class_counts(), vec![78, 124]);
    }

    #[test]
    fn balanced_ten_split_four_each() {
        let ds = toy(vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1], 2);
        let (train, _) = split(&ds, &SplitSpec { train_fraction: 0.8, seed: 1, stratified: true }).unwrap();
        assert_eq!(train.class_counts(), vec![4, 4]);
    }

    #[test]
    fn split_is_deterministic() {
        let ds = toy((0..50).map(|i| i % 3).collect(), 3);
        let spec = SplitSpec { train_fraction: 0.7, seed: 99, stratified: true };
        assert_eq!(split_indices(&ds.labels, 3, &spec).unwrap(), split_indices(&ds.labels, 3, &spec).unwrap());
    }

    #[test]
    fn singleton_class_cannot_be_stratified() {
        let ds = toy(vec![0, 0, 0, 1], 2);
        let err = split(&ds, &SplitSpec::default()).unwrap_err();
        assert!(matches!(err, Error::Split { class: 1, count: 1 }));
    }

    #[test]
    fn concat_dims_and_tag() {
        let a = toy(vec![0, 1, 0, 1], 2);
        let mut b = a.clone();
        b.source_tag = "other".into();
        let c = concat_columns(&[a.clone(), b]).unwrap();
        assert_eq!(c.features.cols(), 2);
        assert_eq!(c.source_tag, "toy+other");
        assert_eq!(concat_columns(&[a.clone()]).unwrap().features, a.features);
    }

    #[test]
    fn concat_rejects_mismatched_labels() {
        let a = toy(vec![0, 1, 0, 1], 2);
        let b = toy(vec![1, 0, 0, 1], 2);
        assert!(matches!(concat_columns(&[a, b]), Err(Error::Alignment(_))));
    }
}
