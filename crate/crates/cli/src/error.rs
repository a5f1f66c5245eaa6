use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{stage}: missing input {path} (expected config hash {expected}); run `{producer}` first")]
    MissingInput {
        stage: &'static str,
        producer: &'static str,
        path: PathBuf,
        expected: String,
    },

    #[error("{stage}: {path} was produced by config hash {found}, expected {expected}; rerun `{producer}`")]
    StaleInput {
        stage: &'static str,
        producer: &'static str,
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("plot: {0}")]
    Plot(String),

    #[error(transparent)]
    Core(#[from] plan2vec_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for unmet preconditions (bad config, missing or stale inputs),
    /// 1 for failures while a stage runs.
    pub fn exit_code(&self) -> i32 {
        use plan2vec_core::Error as Core;
        match self {
            CliError::Config(_) | CliError::MissingInput { .. } | CliError::StaleInput { .. } | CliError::Plot(_) => 2,
            CliError::Core(Core::InvalidArgument(_) | Core::Artifact { .. } | Core::Disconnected { .. }) => 2,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
