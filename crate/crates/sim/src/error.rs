use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] cpgd_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("map file: {0}")]
    MapFile(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl SimError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Model(cpgd_core::Error::Infeasible(_)) => 3,
            SimError::Model(cpgd_core::Error::CalibrationFailed { .. }) => 3,
            SimError::Model(cpgd_core::Error::InvalidGeometry(_)) => 3,
            SimError::Io { .. } | SimError::Csv(_) | SimError::Json(_) | SimError::Check(_) => 1,
            _ => 2,
        }
    }
}

pub type SimResult<T> = Result<T, SimError>;
