use geocausal_core::{Error, ErrorClass};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stale or missing upstream artifacts:\n{0}")]
    Stale(String),
    #[error("{0}")]
    MissingStage(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(Error::Csv(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}

impl CliError {
    /// 2 validation, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.class() {
                ErrorClass::Validation => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
            },
            CliError::Config(_) => 2,
            CliError::Stale(_) | CliError::MissingStage(_) => 3,
        }
    }
}
