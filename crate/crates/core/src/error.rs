use thiserror::Error;

use crate::sim::SimTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its domain (non-positive length, empty list, ...).
    #[error("invalid {field}: {reason}")]
    Domain { field: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("frequency response undefined at omega = {omega}: resolvent is singular")]
    Evaluation { omega: f64 },

    #[error("system is not stable; H-infinity norm is infinite")]
    Unstable,

    #[error("plant is near-singular (sigma2/sigma1 = {ratio:e}); decoupling is ill-posed")]
    NearSingularPlant { ratio: f64 },

    #[error("interconnection is ill-posed: {0}")]
    Interconnection(String),

    #[error("no robustly stable gain at or below K_P = {0}")]
    NoStableGain(f64),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("closed loop diverged at t = {t:.3} s (|y| > {limit} rad)")]
    Diverged { t: f64, limit: f64, trace: Box<SimTrace> },
}

impl Error {
    pub(crate) fn domain(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain { field, reason: reason.into() }
    }
}
