use thiserror::Error;

/// Errors raised by the shell-model toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A floating-point result left the representable range.
    #[error("range error: {0}")]
    Range(String),

    /// Symbolic computation exceeded its configured size budget.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// A Liouville-type operator would need shells beyond the truncation level.
    #[error("boundary closure: {0}")]
    BoundaryClosure(String),

    /// A stepping routine was called with a configuration for another scheme.
    #[error("scheme mismatch: expected {expected}, got {actual}")]
    SchemeMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    /// The monitored norm exceeded the configured cap.
    #[error("blow-up at t = {time}: H^-alpha norm {norm:e} exceeds cap")]
    Blowup { time: f64, norm: f64 },

    /// The implicit solver did not converge even after step halving.
    #[error("step failure at t = {time}: {reason}")]
    StepFailure { time: f64, reason: String },

    /// Malformed serialized input.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
