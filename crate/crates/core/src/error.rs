use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate sample: pooled size {0} is below 4, Mood variance is not positive")]
    DegenerateSample(usize),

    #[error("ordering violated: {0}")]
    Ordering(String),

    #[error(
        "threshold calibration exhausted at t = {t}: only {survivors} surviving streams \
         (need {required}); increase the number of trials"
    )]
    CalibrationExhausted {
        t: usize,
        survivors: usize,
        required: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
