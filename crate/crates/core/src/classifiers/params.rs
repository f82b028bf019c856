//! Classifier families, typed hyperparameter values, and the declared
//! hyperparameter space of each family.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The nine classifier families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    Gbt,
    Mlp,
    GaussianNb,
    AdaBoost,
    Knn,
    RandomForest,
    SvmLinear,
    SvmSigmoid,
    SvmRbf,
}

impl Family {
    pub const ALL: [Family; 9] = [
        Family::Gbt,
        Family::Mlp,
        Family::GaussianNb,
        Family::AdaBoost,
        Family::Knn,
        Family::RandomForest,
        Family::SvmLinear,
        Family::SvmSigmoid,
        Family::SvmRbf,
    ];

    /// Column name used in evaluation tables.
    pub fn name(self) -> &'static str {
        match self {
            Family::Gbt => "XGBoost",
            Family::Mlp => "MLP",
            Family::GaussianNb => "GaussianNB",
            Family::AdaBoost => "Adaboost",
            Family::Knn => "KNN",
            Family::RandomForest => "RFClassifier",
            Family::SvmLinear => "SVM_linear",
            Family::SvmSigmoid => "SVM_sigmoid",
            Family::SvmRbf => "SVM_RBF",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        Family::ALL.iter().position(|&f| f == self).expect("listed") as u8
    }

    pub fn is_svm(self) -> bool {
        matches!(self, Family::SvmLinear | Family::SvmSigmoid | Family::SvmRbf)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Ok(match key.as_str() {
            "xgboost" | "gbt" | "gradient_boosting" => Family::Gbt,
            "mlp" => Family::Mlp,
            "gaussiannb" | "gaussian_nb" | "gnb" => Family::GaussianNb,
            "adaboost" => Family::AdaBoost,
            "knn" => Family::Knn,
            "rfclassifier" | "rf" | "randomforest" | "random_forest" => Family::RandomForest,
            "svm_linear" => Family::SvmLinear,
            "svm_sigmoid" => Family::SvmSigmoid,
            "svm_rbf" => Family::SvmRbf,
            _ => return Err(Error::Config(format!("unknown classifier family {s:?}"))),
        })
    }
}

/// A hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamValue {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    /// Hidden layer sizes.
    Layers(Vec<usize>),
    /// Class priors.
    Floats(Vec<f64>),
}

impl ParamValue {
    pub fn str(s: &str) -> Self {
        ParamValue::Str(s.to_string())
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            ParamValue::Float(v) => Some(v),
            ParamValue::Int(v) => Some(v as f64),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            ParamValue::Int(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            ParamValue::Bool(b) => Some(b),
            _ => None,
        }
    }

    /// Parses the textual forms produced by `Display`.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        let err = || Error::Config(format!("cannot parse hyperparameter value {text:?}"));
        if t.is_empty() {
            return Err(err());
        }
        match t {
            "None" | "none" => return Ok(ParamValue::None),
            "True" | "true" => return Ok(ParamValue::Bool(true)),
            "False" | "false" => return Ok(ParamValue::Bool(false)),
            _ => {}
        }
        if let Some(inner) = t.strip_prefix('(').and_then(|r| r.strip_suffix(')')) {
            let sizes = inner
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<usize>().map_err(|_| err()))
                .collect::<Result<Vec<_>>>()?;
            return Ok(ParamValue::Layers(sizes));
        }
        if let Some(inner) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let vals = inner
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|_| err()))
                .collect::<Result<Vec<_>>>()?;
            return Ok(ParamValue::Floats(vals));
        }
        if let Ok(i) = t.parse::<i64>() {
            return Ok(ParamValue::Int(i));
        }
        if let Ok(f) = t.parse::<f64>() {
            return Ok(ParamValue::Float(f));
        }
        Ok(ParamValue::Str(t.to_string()))
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::None => f.write_str("None"),
            ParamValue::Bool(true) => f.write_str("True"),
            ParamValue::Bool(false) => f.write_str("False"),
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v:?}"),
            ParamValue::Str(s) => f.write_str(s),
            ParamValue::Layers(l) => {
                let parts: Vec<String> = l.iter().map(ToString::to_string).collect();
                if parts.len() == 1 {
                    write!(f, "({},)", parts[0])
                } else {
                    write!(f, "({})", parts.join(","))
                }
            }
            ParamValue::Floats(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
                write!(f, "[{}]", parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Int { min: i64 },
    IntOrNone { min: i64 },
    Float { min: f64, inclusive: bool },
    FloatOrChoice { min: f64, choices: &'static [&'static str] },
    IntOrChoice { min: i64, choices: &'static [&'static str] },
    Choice(&'static [&'static str]),
    Bool,
    Layers,
    PriorsOrNone,
    /// Accepted for interface compatibility; does not change results.
    Any,
}

struct Decl {
    name: &'static str,
    kind: Kind,
    default: ParamValue,
}

fn decl(name: &'static str, kind: Kind, default: ParamValue) -> Decl {
    Decl { name, kind, default }
}

fn declarations(family: Family) -> Vec<Decl> {
    use Kind::*;
    use ParamValue as V;
    let svm_shared = |kernel: &'static str| {
        vec![
            decl("C", Float { min: 0.0, inclusive: false }, V::Float(1.0)),
            decl("kernel", Choice(match kernel {
                "linear" => &["linear"],
                "sigmoid" => &["sigmoid"],
                _ => &["rbf"],
            }), V::str(kernel)),
            decl("tol", Float { min: 0.0, inclusive: false }, V::Float(1e-3)),
            decl("class_weight", Choice(&["None", "balanced"]), V::None),
            decl("random_state", Any, V::None),
            decl("max_iter", Int { min: -1 }, V::Int(-1)),
            decl("shrinking", Bool, V::Bool(true)),
            decl("probability", Bool, V::Bool(false)),
            decl("cache_size", Any, V::Float(200.0)),
        ]
    };
    match family {
        Family::Gbt => vec![
            decl("max_depth", Int { min: 0 }, V::Int(6)),
            decl("learning_rate", Float { min: 0.0, inclusive: false }, V::Float(0.3)),
            decl("subsample", Float { min: 0.0, inclusive: false }, V::Float(1.0)),
            decl("n_estimators", Int { min: 1 }, V::Int(100)),
            decl("reg_lambda", Float { min: 0.0, inclusive: true }, V::Float(1.0)),
            decl("min_child_weight", Float { min: 0.0, inclusive: true }, V::Float(1.0)),
        ],
        Family::Mlp => vec![
            decl("hidden_layer_sizes", Layers, V::Layers(vec![100])),
            decl("activation", Choice(&["relu", "tanh", "logistic"]), V::str("relu")),
            decl("solver", Choice(&["adam", "sgd", "lbfgs"]), V::str("adam")),
            decl("max_iter", Int { min: 1 }, V::Int(1000)),
            decl("momentum", Float { min: 0.0, inclusive: true }, V::Float(0.9)),
            decl("learning_rate_init", Float { min: 0.0, inclusive: false }, V::Float(1e-3)),
            decl("alpha", Float { min: 0.0, inclusive: true }, V::Float(0.0)),
            decl("beta_1", Float { min: 0.0, inclusive: true }, V::Float(0.9)),
            decl("beta_2", Float { min: 0.0, inclusive: true }, V::Float(0.999)),
            decl("epsilon", Float { min: 0.0, inclusive: false }, V::Float(1e-8)),
            decl("loss", Choice(&["mse", "cross_entropy"]), V::str("mse")),
        ],
        Family::GaussianNb => vec![
            decl("var_smoothing", Float { min: 0.0, inclusive: true }, V::Float(1e-9)),
            decl("priors", PriorsOrNone, V::None),
        ],
        Family::AdaBoost => vec![
            decl("n_estimators", Int { min: 1 }, V::Int(100)),
            decl("learning_rate", Float { min: 0.0, inclusive: false }, V::Float(1.0)),
        ],
        Family::Knn => vec![
            decl("n_neighbors", Int { min: 1 }, V::Int(5)),
            decl("weights", Choice(&["uniform", "distance"]), V::str("uniform")),
            decl("algorithm", Choice(&["auto", "ball_tree", "kd_tree", "brute"]), V::str("auto")),
            decl("leaf_size", Int { min: 1 }, V::Int(30)),
            decl("p", Float { min: 1.0, inclusive: true }, V::Int(2)),
            decl("metric", Choice(&["euclidean", "manhattan", "minkowski"]), V::str("minkowski")),
            decl("n_jobs", Any, V::None),
        ],
        Family::RandomForest => vec![
            decl("n_estimators", Int { min: 1 }, V::Int(100)),
            decl("max_depth", IntOrNone { min: 0 }, V::None),
            decl("min_samples_split", Int { min: 2 }, V::Int(2)),
            decl("min_samples_leaf", Int { min: 1 }, V::Int(1)),
            decl("max_features", IntOrChoice { min: 1, choices: &["auto", "sqrt", "log2", "None"] }, V::str("sqrt")),
            decl("bootstrap", Bool, V::Bool(true)),
            decl("criterion", Choice(&["gini", "entropy"]), V::str("gini")),
            decl("oob_score", Bool, V::Bool(false)),
            decl("random_state", IntOrNone { min: 0 }, V::None),
        ],
        Family::SvmLinear => svm_shared("linear"),
        Family::SvmSigmoid => {
            let mut d = svm_shared("sigmoid");
            d.push(decl("gamma", FloatOrChoice { min: 0.0, choices: &["scale", "auto"] }, V::str("scale")));
            d.push(decl("coef0", Float { min: f64::NEG_INFINITY, inclusive: true }, V::Float(0.0)));
            d
        }
        Family::SvmRbf => {
            let mut d = svm_shared("rbf");
            d.push(decl("gamma", FloatOrChoice { min: 0.0, choices: &["scale", "auto"] }, V::str("scale")));
            d
        }
    }
}

fn check(family: Family, d: &Decl, v: &ParamValue) -> Result<()> {
    let bad = || {
        Error::Hyperparameter(format!("{family}: value {v} is not valid for {}", d.name))
    };
    let in_range = |x: f64, min: f64, inclusive: bool| x.is_finite() && (x > min || (inclusive && x == min));
    let ok = match (&d.kind, v) {
        (Kind::Any, _) => true,
        (Kind::Int { min }, ParamValue::Int(i)) => i >= min,
        (Kind::IntOrNone { .. }, ParamValue::None) => true,
        (Kind::IntOrNone { min }, ParamValue::Int(i)) => i >= min,
        (Kind::Float { min, inclusive }, _) => v.as_f64().is_some_and(|x| in_range(x, *min, *inclusive)),
        (Kind::FloatOrChoice { choices, .. }, ParamValue::Str(s)) => choices.contains(&s.as_str()),
        (Kind::FloatOrChoice { min, .. }, _) => v.as_f64().is_some_and(|x| in_range(x, *min, false)),
        (Kind::IntOrChoice { choices, .. }, ParamValue::Str(s)) => choices.contains(&s.as_str()),
        (Kind::IntOrChoice { choices, .. }, ParamValue::None) => choices.contains(&"None"),
        (Kind::IntOrChoice { min, .. }, ParamValue::Int(i)) => i >= min,
        (Kind::Choice(choices), ParamValue::Str(s)) => choices.contains(&s.as_str()),
        (Kind::Choice(choices), ParamValue::None) => choices.contains(&"None"),
        (Kind::Bool, ParamValue::Bool(_)) => true,
        (Kind::Layers, ParamValue::Layers(l)) => !l.is_empty() && l.iter().all(|&s| s > 0),
        (Kind::PriorsOrNone, ParamValue::None) => true,
        (Kind::PriorsOrNone, ParamValue::Floats(p)) => {
            !p.is_empty() && p.iter().all(|&x| x >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-8
        }
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(bad())
    }
}

/// Names of every hyperparameter a family accepts.
pub fn parameter_names(family: Family) -> Vec<&'static str> {
    declarations(family).iter().map(|d| d.name).collect()
}

/// Checks one `(name, value)` pair against the family's declared space.
pub fn validate_param(family: Family, name: &str, value: &ParamValue) -> Result<()> {
    let decls = declarations(family);
    let d = decls
        .iter()
        .find(|d| d.name == name)
        .ok_or_else(|| Error::Hyperparameter(format!("{family} has no hyperparameter {name:?}")))?;
    check(family, d, value)
}

/// Algorithm choice plus hyperparameters and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub family: Family,
    pub hyperparams: BTreeMap<String, ParamValue>,
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn new(family: Family, seed: u64) -> Self {
        Self { family, hyperparams: BTreeMap::new(), seed }
    }

    /// Sets one hyperparameter after validating it.
    pub fn with(mut self, name: &str, value: ParamValue) -> Result<Self> {
        validate_param(self.family, name, &value)?;
        self.hyperparams.insert(name.to_string(), value);
        Ok(self)
    }

    pub fn set(&mut self, name: &str, value: ParamValue) -> Result<()> {
        validate_param(self.family, name, &value)?;
        self.hyperparams.insert(name.to_string(), value);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperparams.iter().try_for_each(|(k, v)| validate_param(self.family, k, v))
    }

    /// Explicit value or the family default.
    pub fn get(&self, name: &str) -> ParamValue {
        if let Some(v) = self.hyperparams.get(name) {
            return v.clone();
        }
        declarations(self.family)
            .into_iter()
            .find(|d| d.name == name)
            .map(|d| d.default)
            .unwrap_or_else(|| panic!("{} declares no hyperparameter {name}", self.family))
    }

    pub(crate) fn f64(&self, name: &str) -> f64 {
        self.get(name).as_f64().expect("validated float")
    }

    pub(crate) fn usize(&self, name: &str) -> usize {
        self.get(name).as_i64().expect("validated int") as usize
    }

    pub(crate) fn string(&self, name: &str) -> String {
        match self.get(name) {
            ParamValue::Str(s) => s,
            ParamValue::None => "None".to_string(),
            other => other.to_string(),
        }
    }

    pub(crate) fn flag(&self, name: &str) -> bool {
        self.get(name).as_bool().expect("validated bool")
    }

    /// `key=value` pairs of the explicit hyperparameters.
    pub fn describe(&self) -> String {
        let parts: Vec<String> = self.hyperparams.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{}({})", self.family, parts.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert!("svm_poly".parse::<Family>().is_err());
    }

    #[test]
    fn values_round_trip_through_text() {
        for v in [
            ParamValue::None,
            ParamValue::Bool(true),
            ParamValue::Int(-1),
            ParamValue::Float(0.001),
            ParamValue::Float(1.0),
            ParamValue::str("balanced"),
            ParamValue::Layers(vec![50]),
            ParamValue::Layers(vec![100, 50, 36]),
            ParamValue::Floats(vec![0.3, 0.7]),
        ] {
            assert_eq!(ParamValue::parse(&v.to_string()).unwrap(), v, "{v}");
        }
    }

    #[test]
    fn rejects_undeclared_and_mistyped() {
        let s = ClassifierSpec::new(Family::Knn, 0);
        assert!(s.clone().with("gamma", ParamValue::Float(1.0)).is_err());
        assert!(s.clone().with("n_neighbors", ParamValue::Float(1.5)).is_err());
        assert!(s.clone().with("n_neighbors", ParamValue::Int(0)).is_err());
        assert!(s.with("weights", ParamValue::str("distance")).is_ok());
        let nb = ClassifierSpec::new(Family::GaussianNb, 0);
        assert!(nb.clone().with("priors", ParamValue::Floats(vec![0.3, 0.6])).is_err());
        assert!(nb.with("priors", ParamValue::Floats(vec![0.3, 0.7])).is_ok());
    }

    #[test]
    fn svm_kernel_is_pinned_to_family() {
        let s = ClassifierSpec::new(Family::SvmLinear, 0);
        assert!(s.clone().with("kernel", ParamValue::str("rbf")).is_err());
        assert!(s.with("kernel", ParamValue::str("linear")).is_ok());
    }

    #[test]
    fn defaults_resolve() {
        let s = ClassifierSpec::new(Family::AdaBoost, 0);
        assert_eq!(s.get("n_estimators"), ParamValue::Int(100));
        assert_eq!(ClassifierSpec::new(Family::GaussianNb, 0).get("var_smoothing"), ParamValue::Float(1e-9));
    }
}
