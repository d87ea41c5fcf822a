//! Error types shared across the reconstruction pipeline.

use thiserror::Error;

/// Errors raised by the Kalman filter / smoother machinery.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum KalmanError {
    /// Propagation produced NaN or infinity, signalling degenerate
    /// trajectory parameters.
    #[error("propagation produced a non-finite value")]
    NonFinite,
    /// The trajectory does not reach the requested layer radius.
    #[error("helix does not intersect layer {0}")]
    Missed(usize),
    /// Residual covariance is numerically singular (condition number above
    /// the configured limit); no silent pseudo-inverse is taken.
    #[error("residual covariance is numerically singular")]
    SingularResidualCov,
}

/// Errors raised by event generation and configuration validation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Errors raised by file I/O and format parsing.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed data: {0}")]
    Malformed(String),
    /// Requested an operation that needs ground truth on a truthless event.
    #[error("event record carries no ground truth")]
    NoTruth,
}
