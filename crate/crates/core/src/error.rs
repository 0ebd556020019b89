use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A polynomial degree would exceed the configured cap.
    #[error("degree cap {cap} exceeded (needed {needed})")]
    Capacity { cap: usize, needed: usize },

    /// The per-step nonlinear solve of the catalyst trace failed.
    #[error("solver failure at step {step} (t = {time}): {reason}")]
    SolverFailure { step: usize, time: f64, reason: String },

    /// The particle population outgrew its cap.
    #[error("particle population {population} exceeded cap {cap} at step {step}")]
    Explosion { population: usize, cap: usize, step: usize },

    /// Inputs violate a calling contract (mismatched provenance, lengths, etc).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration key or value is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
