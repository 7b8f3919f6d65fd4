use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Core(#[from] moeplan_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        CliError::Json {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 usage, 3 input integrity, 4 infeasibility.
    pub fn exit_code(&self) -> i32 {
        use moeplan_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::InvalidArgument(_)) => 2,
            CliError::Core(E::Infeasible(_)) => 4,
            _ => 3,
        }
    }
}
