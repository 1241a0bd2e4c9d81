use std::path::PathBuf;

use bolm_core::BolmError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Model(#[from] BolmError),

    #[error("fit did not converge: {0}")]
    NotConverged(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// 2 for invalid input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Model(
                BolmError::SingularMatrix { .. }
                | BolmError::IncompatibleEta { .. }
                | BolmError::NonPositiveCell { .. }
                | BolmError::NotNormalized(_)
                | BolmError::InvalidOddsRatio(_)
                | BolmError::InvalidCumulative(_)
                | BolmError::NegativeDiscriminant(_),
            )
            | Self::NotConverged(_) => 3,
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
