use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("stage {stage}: {source}")]
    Solver {
        stage: String,
        #[source]
        source: kskdv_core::Error,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for parse and validation failures, 3 for solver failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse { .. } | Self::Validation(_) => 2,
            Self::Solver { .. } => 3,
            Self::Io { .. } => 1,
        }
    }

    pub fn solver(stage: impl Into<String>, source: kskdv_core::Error) -> Self {
        Self::Solver { stage: stage.into(), source }
    }
}
