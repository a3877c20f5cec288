use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite gradient at step {step} in parameter `{param}`")]
    NonFiniteGradient { step: usize, param: String },
    #[error("non-finite loss at step {step} (fold {fold})")]
    Divergence { step: usize, fold: usize },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate arm: {0}")]
    DegenerateArm(String),
    #[error("fold {fold} is degenerate: {reason}")]
    FoldDegenerate { fold: usize, reason: String },
    #[error("clustering error: {0}")]
    Clustering(String),
    #[error("no identification: {0}")]
    NoIdentification(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("label alignment error: {0}")]
    Alignment(String),
    #[error("geometry error in polygon `{polygon}`: {reason}")]
    Geometry { polygon: String, reason: String },
    #[error("invalid record `{id}`: {reason}")]
    RecordInvalid { id: String, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported specification: {0}")]
    Unsupported(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Validation(_) | Error::Unsupported(_) | Error::Contract(_) => {
                ErrorClass::Validation
            }
            Error::NonFiniteGradient { .. }
            | Error::Divergence { .. }
            | Error::Domain(_)
            | Error::NoIdentification(_)
            | Error::Clustering(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}
