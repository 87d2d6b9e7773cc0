use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid configuration at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no manifest.json in {}", .0.display())]
    MissingManifest(PathBuf),
    #[error("malformed manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
    #[error("solver diverged ({message}); report written to {}", report.display())]
    Diverged { message: String, report: PathBuf },
    #[error("thread pool: {0}")]
    Threads(String),
    #[error(transparent)]
    Core(#[from] qbsde_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Read { .. } | CliError::Schema { .. } => 2,
            CliError::Diverged { .. } => 3,
            _ => 1,
        }
    }
}
