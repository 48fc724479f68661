use thiserror::Error;

/// Errors produced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the admissible domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A solver or integrator failed to reach its tolerance.
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// A quantity provable from the thresholds was violated at runtime;
    /// this indicates a misconfigured threshold set, not bad input.
    #[error("invariant breach: {0}")]
    InvariantBreach(String),

    /// Bad run configuration (unknown key, unparsable value, out of range).
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 usage/config, 3 numeric trouble.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) => 2,
            _ => 3,
        }
    }
}
