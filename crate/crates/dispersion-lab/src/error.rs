use quartic::QuarticError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config: {0}")]
    Config(String),
    #[error("fit: {0}")]
    Fit(String),
    #[error("accuracy: {0}")]
    Accuracy(String),
    #[error(transparent)]
    Numerics(#[from] QuarticError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl LabError {
    /// Process exit code: 2 for accuracy failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Accuracy(_) | LabError::Fit(_) => 2,
            LabError::Numerics(
                QuarticError::Accuracy { .. } | QuarticError::NearThreshold { .. } | QuarticError::Fit(_),
            ) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = core::result::Result<T, LabError>;
