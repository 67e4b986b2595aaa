//! Failure classes mapped to process exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, arguments or input files.
    #[error("{0}")]
    Validation(String),
    /// The learner broke; outputs up to the break were still written.
    #[error("learner breakage: {0}")]
    Breakage(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Breakage(_) => 2,
            CliError::Validation(_) | CliError::Io { .. } => 1,
        }
    }
}

impl From<jitai_core::Error> for CliError {
    fn from(e: jitai_core::Error) -> Self {
        match e {
            jitai_core::Error::LearnerBroken { .. } => CliError::Breakage(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}
