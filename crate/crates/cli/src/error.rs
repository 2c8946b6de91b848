use std::path::Path;

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] phasekit::Error),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    #[error("cannot encode output: {0}")]
    Output(String),

    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Io { .. } => "io",
            CliError::Output(_) => "output",
            CliError::Pool(_) => "pool",
        }
    }

    pub fn module(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.module(),
            _ => "cli",
        }
    }

    /// One-line JSON record for stderr.
    pub fn record(&self) -> String {
        json!({
            "error": {
                "kind": self.kind(),
                "module": self.module(),
                "message": self.to_string(),
            }
        })
        .to_string()
    }
}
