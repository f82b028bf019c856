use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can surface.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("shape error: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("split error: class {class} has {count} sample(s), stratification needs at least 2")]
    Split { class: usize, count: usize },

    #[error("fold error: class {class} has {count} sample(s), fewer than {folds} folds")]
    Fold { class: usize, count: usize, folds: usize },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("hyperparameter error: {0}")]
    Hyperparameter(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("solver did not converge after {iterations} pair updates (KKT residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("crop error: {0}")]
    Crop(String),

    #[error("grid of {size} assignments exceeds the cap of {cap}")]
    GridSize { size: u128, cap: usize },

    #[error("selection error: {0}")]
    Selection(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("model blob error: {0}")]
    Blob(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape { expected: expected.to_string(), got: got.to_string() }
    }

    /// Wraps the error with the coordinates of the experiment that raised it.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures caused by bad input data or files rather than configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self.root(),
            Error::Format { .. }
                | Error::Consistency(_)
                | Error::Data(_)
                | Error::Alignment(_)
                | Error::Parse { .. }
                | Error::Io { .. }
                | Error::Split { .. }
                | Error::Fold { .. }
        )
    }

    pub fn is_config_error(&self) -> bool {
        matches!(self.root(), Error::Config(_) | Error::Hyperparameter(_) | Error::GridSize { .. })
    }
}
