use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (shape, symmetry, membership...).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("matrix is not positive definite: pivot {pivot} is {value:e}")]
    Singular { pivot: usize, value: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("maximization diverged: {0}")]
    Divergence(String),

    #[error("gradient undefined on the domain boundary: {0}")]
    DomainBoundary(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-finite loss at epoch {epoch}, sample {sample}")]
    NonFiniteLoss { epoch: usize, sample: usize },

    #[error("every grid cell diverged: {0}")]
    AllCellsDiverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::ContractViolation(msg.into())
    }

    /// True for errors caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::Divergence(_)
                | Error::NonFiniteLoss { .. }
                | Error::AllCellsDiverged(_)
                | Error::Singular { .. }
                | Error::Infeasible(_)
        )
    }
}
