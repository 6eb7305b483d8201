use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate depth: |x3| = {x3:e} is below the guard {guard:e}")]
    DegenerateDepth { x3: f64, guard: f64 },

    #[error("degenerate range: |r_q/c| = {range:e} m")]
    DegenerateRange { range: f64 },

    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),

    #[error("filter diverged at step {step}: {reason}")]
    FilterDivergence { step: u64, reason: String },

    #[error("residual window is empty")]
    EmptyWindow,

    #[error("no log rows in the requested interval")]
    EmptyInterval,

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("malformed run log: {0}")]
    MalformedLog(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
