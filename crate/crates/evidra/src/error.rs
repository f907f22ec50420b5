use std::path::PathBuf;

use thiserror::Error;

/// Failure of a command, classified by process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unknown config keys or invalid parameter values.
    #[error("usage error: {0}")]
    Usage(String),
    /// Missing, unreadable or inconsistent input and output files.
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// NaN, infinities or divergence during training or inference.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// Adds the source of the problem, such as a file name, to the message.
    pub fn context(self, what: impl std::fmt::Display) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{what}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("{what}: {m}")),
            io @ CliError::Io { .. } => io,
        }
    }
}

impl From<evidra_core::Error> for CliError {
    fn from(e: evidra_core::Error) -> Self {
        use evidra_core::Error as E;
        if e.is_numeric() {
            return CliError::Numeric(e.to_string());
        }
        match e {
            E::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
