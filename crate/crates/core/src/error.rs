use thiserror::Error;

/// Errors raised by the estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// Residual too close to zero for the score to be differentiable.
    #[error("residual norm {norm:e} is below the zero floor")]
    SingularResidual { norm: f64 },

    /// The estimating-equation Jacobian is not invertible at the solution.
    #[error("M matrix is singular (condition number {condition:e})")]
    SingularM { condition: f64 },

    #[error("design matrix is rank deficient (condition number {condition:e})")]
    RankDeficient { condition: f64 },

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("knot placement failed: {0}")]
    KnotDegeneracy(String),

    #[error("too many failed replicates: {failed} of {total}")]
    ReplicateFailures { failed: usize, total: usize },

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
