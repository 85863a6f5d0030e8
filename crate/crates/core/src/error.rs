//! Error taxonomy shared by all modules.
//!
//! Three broad families matter to callers:
//!
//! * **validation** — bad parameters, malformed input data, inconsistent
//!   shapes; the computation never started,
//! * **numerical** — a computation ran and produced something that violates
//!   a hard guarantee (probability out of range, NaN, failed cross-check),
//! * **io** — file and serialization plumbing.
//!
//! The CLI maps validation errors to exit code 1 and numerical errors to
//! exit code 2; see the `is_numerical` helper.

use thiserror::Error;

/// Unified error type for the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or input failed validation. `what` names the offending
    /// field or quantity so config errors are actionable.
    #[error("invalid {what}: {reason}")]
    Invalid { what: String, reason: String },

    /// A price that must lie on a tick grid does not (beyond tolerance).
    #[error("price {price} is not on the grid with tick {alpha} (offset {offset:.3e})")]
    OffGrid { price: f64, alpha: f64, offset: f64 },

    /// Consecutive prices violate the one-tick-per-change rule.
    #[error("price change from {prev} to {now} is not exactly one tick ({alpha})")]
    NotOneTick { prev: f64, now: f64, alpha: f64 },

    /// The explicit scheme's stability bound is violated.
    #[error("time step {dt:.3e} violates the stability bound {bound:.3e}")]
    CflViolation { dt: f64, bound: f64 },

    /// Grid or domain construction produced nothing usable.
    #[error("empty domain: {0}")]
    EmptyDomain(String),

    /// Two containers that must be index-compatible are not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A transition weight left [0, 1], or weights failed to sum to one.
    #[error("transition weight out of range: {what} = {value:.6e}")]
    ProbabilityRange { what: String, value: f64 },

    /// A numerical cross-check failed (oracle disagreement, estimator
    /// mismatch beyond its tolerance, NaN in a solve).
    #[error("numerical check failed: {0}")]
    NumericalCheck(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Convenience constructor for validation failures.
    pub fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid { what: what.into(), reason: reason.into() }
    }

    /// True for errors that mean "a computation ran and its numbers are
    /// wrong", as opposed to bad inputs or io trouble.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalCheck(_) | Error::ProbabilityRange { .. }
        )
    }
}

/// Result alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
