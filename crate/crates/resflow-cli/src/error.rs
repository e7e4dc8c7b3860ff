//! CLI failure classification. Exit codes: 0 success, 2 usage or
//! configuration problems (including missing or malformed inputs),
//! 3 numerical divergence, 1 anything else.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Io(_) | CliError::Internal(_) => 1,
        }
    }
}
