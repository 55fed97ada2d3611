use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum QuarticError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("out of regime: {0}")]
    OutOfRegime(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("expansion inconsistency: residual exponent {exponent} outside [5.5, 6.5]")]
    ExpansionInconsistency { exponent: f64 },
    #[error("singular diagonal: kernel is singular on the diagonal and the policy forbids it")]
    SingularDiagonal,
    #[error("degenerate potential: v vanishes on every node")]
    DegeneratePotential,
    #[error("not invertible on range(S): smallest singular value {sigma_min:e}")]
    NotInvertible { sigma_min: f64 },
    #[error("near-threshold singularity at lambda={lambda}: sigma_min={sigma_min:e}")]
    NearThreshold { lambda: f64, sigma_min: f64 },
    #[error("accuracy error: achieved estimate {achieved:e} above tolerance {requested:e}")]
    Accuracy { achieved: f64, requested: f64 },
    #[error("discretization failure: {0}")]
    Discretization(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("construction error: {0}")]
    Construction(String),
    #[error("fit error: {0}")]
    Fit(String),
}

pub type Result<T> = core::result::Result<T, QuarticError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(QuarticError::Domain(msg.into()))
}
