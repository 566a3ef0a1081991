use std::path::PathBuf;

use thiserror::Error;

use crate::gains::GameMode;

#[derive(Debug, Error)]
pub enum Error {
    #[error("step {step} violates {mode} mode: {detail}")]
    ModeViolation {
        step: usize,
        mode: GameMode,
        detail: String,
    },

    #[error("cumulative gain exceeds {cap:e} at step {step}")]
    Overflow { step: usize, cap: f64 },

    #[error("{what} must be finite, got {value}")]
    NonFinite { what: &'static str, value: f64 },

    #[error("{name} must lie in {expected}, got {value}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("policy `{0}` reads the current step's gains; pass them explicitly")]
    OracleRequired(String),

    #[error("policy `{0}` is causal and must not receive the current step's gains")]
    OracleUnexpected(String),

    #[error("{0}")]
    Unsupported(String),

    #[error("covariance matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("cannot parse `{input}`: {reason}")]
    Parse { input: String, reason: String },

    #[error("invalid config {path}: {reason}")]
    Config { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(what: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { what, value })
    }
}

pub(crate) fn ensure_open_unit(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value < 1.0 {
        Ok(value)
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            expected: "(0,1)",
        })
    }
}
