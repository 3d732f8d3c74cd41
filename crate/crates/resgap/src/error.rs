//! Error type shared by every module; variants map onto the CLI exit codes.

use thiserror::Error;

/// Crate-wide error type.  `Config` variants exit the CLI with code 2,
/// everything else with code 1.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, schema violation, or inconsistent parameters.
    #[error("config error: {0}")]
    Config(String),

    /// A numerical routine failed to converge or left its domain of validity.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The escape certificate cannot be applied (kinetic energy too small
    /// near the escape radius), so escape classification is unreliable.
    #[error("escape certificate inapplicable: {0}")]
    CertificateInapplicable(String),

    /// Underlying I/O failure while reading configs or writing outputs.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed JSON in a config file.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code associated with this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
