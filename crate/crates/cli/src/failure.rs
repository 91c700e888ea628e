use thiserror::Error;

/// A failed subcommand, classified by exit code.
#[derive(Debug, Error)]
pub enum Failure {
    /// Invalid config, missing input or an unsupported combination.
    #[error("{0}")]
    Config(String),
    #[error("numerical divergence: {0}")]
    Numerical(String),
    /// A verification the command was asked to run did not hold.
    #[error("check failed: {0}")]
    Check(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Check(_) => 4,
            Failure::Io(_) => 1,
        }
    }
}

impl From<efy_core::Error> for Failure {
    fn from(e: efy_core::Error) -> Self {
        if e.is_numerical() {
            return Failure::Numerical(e.to_string());
        }
        match e {
            efy_core::Error::Io(io) => Failure::Io(io.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Io(e.to_string())
    }
}
