//! The nine classifier families behind one fit / predict interface.

pub mod adaboost;
pub mod forest;
pub mod gbt;
pub mod knn;
pub mod mlp;
pub mod naive_bayes;
pub mod params;
pub mod svm;
pub mod tree;

use serde::{Deserialize, Serialize};

pub use params::{parameter_names, validate_param, ClassifierSpec, Family, ParamValue};

use crate::data::{FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};
use adaboost::AdaBoostModel;
use forest::{ForestModel, ForestParams};
use gbt::{GbtModel, GbtParams};
use knn::{KnnModel, Metric, Weighting};
use mlp::{Activation, LossKind, MlpModel, MlpParams, Solver};
use naive_bayes::GaussianNbModel;
use svm::{Kernel, KernelKind, SvmModel, SvmParams};
use tree::{argmax, CartParams, Criterion, FeatureSubset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Gbt(GbtModel),
    Mlp(MlpModel),
    GaussianNb(GaussianNbModel),
    AdaBoost(AdaBoostModel),
    Knn(KnnModel),
    RandomForest(ForestModel),
    Svm(SvmModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ClassifierSpec,
    pub class_count: usize,
    pub n_features: usize,
    pub params: ModelParams,
}

fn svm_params(spec: &ClassifierSpec, x: &FeatureMatrix) -> SvmParams {
    let kind = match spec.family {
        Family::SvmLinear => KernelKind::Linear,
        Family::SvmSigmoid => KernelKind::Sigmoid,
        _ => KernelKind::Rbf,
    };
    let gamma = if kind == KernelKind::Linear {
        0.0
    } else {
        match spec.get("gamma") {
            ParamValue::Str(s) if s == "auto" => svm::gamma_auto(x),
            ParamValue::Str(_) => svm::gamma_scale(x),
            v => v.as_f64().expect("validated gamma"),
        }
    };
    let coef0 = if kind == KernelKind::Sigmoid { spec.f64("coef0") } else { 0.0 };
    let max_iter = spec.get("max_iter").as_i64().expect("validated");
    SvmParams {
        kernel: Kernel { kind, gamma, coef0 },
        c: spec.f64("C"),
        tol: spec.f64("tol"),
        balanced: spec.string("class_weight") == "balanced",
        max_iter: (max_iter >= 0).then_some(max_iter as usize),
    }
}

/// Fits a classifier. The training set must hold at least two rows and at
/// least two classes present.
pub fn fit(spec: &ClassifierSpec, train: &LabeledDataset) -> Result<FittedModel> {
    spec.validate()?;
    let x = &train.features;
    let y = &train.labels;
    let k = train.class_count;
    let present = train.class_counts().iter().filter(|&&c| c > 0).count();
    if x.rows() < 2 || present < 2 {
        return Err(Error::Fit(format!(
            "{}: need at least two rows and two classes, got {} rows and {present} classes",
            spec.family,
            x.rows()
        )));
    }
    let params = match spec.family {
        Family::Gbt => ModelParams::Gbt(GbtModel::fit(
            x,
            y,
            k,
            &GbtParams {
                n_estimators: spec.usize("n_estimators"),
                learning_rate: spec.f64("learning_rate"),
                max_depth: spec.usize("max_depth"),
                subsample: spec.f64("subsample").min(1.0),
                lambda: spec.f64("reg_lambda"),
                min_child_weight: spec.f64("min_child_weight"),
            },
            spec.seed,
        )),
        Family::Mlp => {
            let hidden = match spec.get("hidden_layer_sizes") {
                ParamValue::Layers(l) => l,
                _ => unreachable!("validated layers"),
            };
            let p = MlpParams {
                hidden,
                activation: match spec.string("activation").as_str() {
                    "tanh" => Activation::Tanh,
                    "logistic" => Activation::Logistic,
                    _ => Activation::Relu,
                },
                solver: match spec.string("solver").as_str() {
                    "sgd" => Solver::Sgd,
                    "lbfgs" => Solver::Lbfgs,
                    _ => Solver::Adam,
                },
                loss: if spec.string("loss") == "cross_entropy" { LossKind::CrossEntropy } else { LossKind::Mse },
                max_iter: spec.usize("max_iter"),
                learning_rate: spec.f64("learning_rate_init"),
                momentum: spec.f64("momentum"),
                alpha: spec.f64("alpha"),
                beta1: spec.f64("beta_1"),
                beta2: spec.f64("beta_2"),
                epsilon: spec.f64("epsilon"),
            };
            ModelParams::Mlp(MlpModel::fit(x, y, k, &p, spec.seed)?)
        }
        Family::GaussianNb => {
            let priors = match spec.get("priors") {
                ParamValue::Floats(p) => Some(p),
                _ => None,
            };
            ModelParams::GaussianNb(GaussianNbModel::fit(x, y, k, spec.f64("var_smoothing"), priors.as_deref())?)
        }
        Family::AdaBoost => ModelParams::AdaBoost(AdaBoostModel::fit(
            x,
            y,
            k,
            spec.usize("n_estimators"),
            spec.f64("learning_rate"),
            spec.seed,
        )),
        Family::Knn => {
            let p = spec.f64("p");
            let metric = match spec.string("metric").as_str() {
                "euclidean" => Metric::Euclidean,
                "manhattan" => Metric::Manhattan,
                _ => Metric::Minkowski(p),
            };
            let weighting = if spec.string("weights") == "distance" { Weighting::Distance } else { Weighting::Uniform };
            ModelParams::Knn(KnnModel::fit(x, y, k, spec.usize("n_neighbors"), metric, weighting)?)
        }
        Family::RandomForest => {
            let max_features = match spec.get("max_features") {
                ParamValue::Int(c) => FeatureSubset::Count(c as usize),
                ParamValue::Str(s) if s == "log2" => FeatureSubset::Log2,
                ParamValue::None => FeatureSubset::All,
                _ => FeatureSubset::Sqrt,
            };
            let p = ForestParams {
                n_estimators: spec.usize("n_estimators"),
                bootstrap: spec.flag("bootstrap"),
                oob_score: spec.flag("oob_score"),
                tree: CartParams {
                    max_depth: spec.get("max_depth").as_i64().map(|d| d as usize),
                    min_samples_split: spec.usize("min_samples_split"),
                    min_samples_leaf: spec.usize("min_samples_leaf"),
                    max_features,
                    criterion: if spec.string("criterion") == "entropy" { Criterion::Entropy } else { Criterion::Gini },
                },
            };
            let seed = spec.get("random_state").as_i64().map_or(spec.seed, |s| s as u64);
            ModelParams::RandomForest(ForestModel::fit(x, y, k, &p, seed)?)
        }
        Family::SvmLinear | Family::SvmSigmoid | Family::SvmRbf => {
            ModelParams::Svm(SvmModel::fit(x, y, k, &svm_params(spec, x))?)
        }
    };
    Ok(FittedModel { spec: spec.clone(), class_count: k, n_features: x.cols(), params })
}

const BLOB_MAGIC: &[u8; 4] = b"DLNS";
const BLOB_VERSION: u16 = 1;

impl FittedModel {
    fn check_shape(&self, x: &FeatureMatrix) -> Result<()> {
        if x.cols() != self.n_features {
            return Err(Error::shape(format!("{} feature columns", self.n_features), format!("{} columns", x.cols())));
        }
        Ok(())
    }

    /// Class probabilities per row; each row sums to one.
    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        self.check_shape(x)?;
        let per_row = |f: &dyn Fn(&[f64]) -> Vec<f64>| x.iter_rows().map(f).collect();
        Ok(match &self.params {
            ModelParams::Mlp(m) => m.predict_proba(x),
            ModelParams::Gbt(m) => per_row(&|r| m.predict_proba_row(r)),
            ModelParams::GaussianNb(m) => per_row(&|r| m.predict_proba_row(r)),
            ModelParams::AdaBoost(m) => per_row(&|r| m.predict_proba_row(r)),
            ModelParams::Knn(m) => per_row(&|r| m.predict_proba_row(r)),
            ModelParams::RandomForest(m) => per_row(&|r| m.predict_proba_row(r)),
            ModelParams::Svm(m) => per_row(&|r| m.predict_proba_row(r)),
        })
    }

    /// Most probable class per row; ties go to the lower class id.
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<usize>> {
        Ok(self.predict_proba(x)?.iter().map(|p| argmax(p)).collect())
    }

    /// Versioned binary encoding: magic, version, family tag, payload.
    pub fn to_blob(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
        out.push(self.spec.family.tag());
        let payload = bincode::serialize(self).map_err(|e| Error::Blob(e.to_string()))?;
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 7 || &bytes[..4] != BLOB_MAGIC {
            return Err(Error::Blob("not a model blob".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != BLOB_VERSION {
            return Err(Error::Blob(format!("unsupported blob version {version}")));
        }
        let model: FittedModel = bincode::deserialize(&bytes[7..]).map_err(|e| Error::Blob(e.to_string()))?;
        if model.spec.family.tag() != bytes[6] {
            return Err(Error::Blob("family tag does not match payload".into()));
        }
        Ok(model)
    }
}

/// Fraction of matching labels.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}
