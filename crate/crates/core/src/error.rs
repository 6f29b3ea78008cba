use thiserror::Error;

/// Errors raised by the model, solver and prediction layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("no endemic equilibrium: {0}")]
    NoEndemicEquilibrium(String),

    #[error("state left the admissible domain at t={time}: {detail}")]
    StepTooLarge { time: f64, detail: String },

    #[error("drift matrix is not Hurwitz (max real eigenvalue part {max_real})")]
    NotHurwitz { max_real: f64 },

    #[error("velocity is outside the cone spanned by the active jump vectors")]
    InfeasibleVelocity,

    #[error("trajectory is not absolutely continuous: {0}")]
    NotAbsolutelyContinuous(String),

    #[error("path does not start at the required point (mismatch {mismatch:e})")]
    MismatchedStart { mismatch: f64 },

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("every one of the {reps} replicates was censored")]
    AllCensored { reps: usize },

    #[error("alpha={0} is outside (0, 1/2]")]
    AlphaOutOfRange(f64),

    #[error("deviation a={a} is outside (0, {limit})")]
    DeviationOutOfRange { a: f64, limit: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
