use thiserror::Error;

/// Errors raised by the flight-stack library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine failed (factorization, non-finite state, drift).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A user-supplied model returned a non-finite value for one sigma point.
    #[error("non-finite output for sigma point {index}")]
    NonFiniteSigma { index: usize },

    /// The identification regressor has no unique least-squares solution.
    #[error("regressor is rank deficient along: {}", directions.join("; "))]
    Identifiability { directions: Vec<String> },

    /// The estimated pitch is inside the guard band around the Euler singularity.
    #[error("pitch {pitch:.4} rad is within the singularity guard band")]
    Singularity { pitch: f64 },

    /// The estimate handed to the controller is too old.
    #[error("estimate is {age_ms:.1} ms old")]
    StaleEstimate { age_ms: f64 },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn numeric(msg: impl Into<String>) -> Error {
    Error::Numeric(msg.into())
}
