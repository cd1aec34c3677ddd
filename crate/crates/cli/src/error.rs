//! Command errors and their exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("certificate failure: {0}")]
    Certificate(String),
}

impl CliError {
    /// 2 for configuration problems, 3 for data problems, 4 when a fit fails
    /// its stationarity certificate.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Certificate(_) => 4,
        }
    }
}

impl From<aacrc_core::Error> for CliError {
    fn from(e: aacrc_core::Error) -> Self {
        use aacrc_core::Error as E;
        match e {
            E::InvalidConfig(_) | E::InvalidAlpha(_) | E::InfeasibleLevel { .. } => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
