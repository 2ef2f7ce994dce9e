//! Operator CLI and HTTP service around the Darja engine.

pub mod app;
pub mod bench;
pub mod cli;
pub mod metrics;
pub mod server;

/// Failure of a CLI command, carrying its exit code class.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or configuration. Exit code 1.
    #[error("{0}")]
    Usage(String),
    /// Missing or malformed input data or artifacts. Exit code 2.
    #[error("{0:#}")]
    Data(anyhow::Error),
    /// Anything that failed while running. Exit code 3.
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn data(e: impl Into<anyhow::Error>) -> Self {
        CliError::Data(e.into())
    }

    pub fn runtime(e: impl Into<anyhow::Error>) -> Self {
        CliError::Runtime(e.into())
    }
}
