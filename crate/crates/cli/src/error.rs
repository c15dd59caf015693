use std::path::PathBuf;

use thiserror::Error;

/// Failures of a run, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{op}: {source}")]
    Core {
        op: &'static str,
        #[source]
        source: sgflow::Error,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 for bad configuration, 3 for numerical failures, 1 for IO.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core { source, .. } if source.is_numeric() => 3,
            CliError::Core {
                source: sgflow::Error::Validation(_),
                ..
            } => 2,
            CliError::Core { .. } | CliError::Io { .. } => 1,
        }
    }
}

/// Tags a library error with the operation that raised it.
pub trait OpContext<T> {
    fn op(self, name: &'static str) -> Result<T, CliError>;
}

impl<T> OpContext<T> for sgflow::Result<T> {
    fn op(self, name: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { op: name, source })
    }
}
