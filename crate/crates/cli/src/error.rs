use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("bad config: {0}")]
    Config(String),

    #[error("missing prerequisite: {}", .0.display())]
    Missing(PathBuf),

    #[error("{context}: {source}")]
    Data {
        context: String,
        #[source]
        source: evacflow_core::Error,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data {
                source: evacflow_core::Error::InvalidConfig(_),
                ..
            } => 1,
            CliError::Missing(_) => 2,
            CliError::Data { .. } | CliError::Io { .. } => 3,
        }
    }
}

/// Attaches a context string to core errors.
pub trait Context<T> {
    fn context(self, what: impl Into<String>) -> Result<T, CliError>;
}

impl<T> Context<T> for evacflow_core::Result<T> {
    fn context(self, what: impl Into<String>) -> Result<T, CliError> {
        self.map_err(|source| CliError::Data {
            context: what.into(),
            source,
        })
    }
}
