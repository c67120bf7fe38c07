//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, LabError>;

/// Errors raised by geometry, solver, and harness operations.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("time {t} outside the flow window [0, {t_max}]")]
    TimeOutOfWindow { t: f64, t_max: f64 },

    #[error("invalid chart point: {reason}")]
    InvalidChartPoint { reason: String },

    #[error("invalid background: {reason}")]
    InvalidBackground { reason: String },

    #[error("invalid path: {reason}")]
    InvalidPath { reason: String },

    #[error("integrator step size underflow at s = {s}")]
    StepSizeUnderflow { s: f64 },

    #[error("trajectory blow-up guard tripped at s = {s} (|velocity| = {speed})")]
    BlowUp { s: f64, speed: f64 },

    #[error("two-point solve failed to converge: {reason} (best residual {residual})")]
    NonConvergence { reason: String, residual: f64 },

    #[error("distortion determinant not positive at t = {t} (det A = {det})")]
    NonpositiveJacobian { t: f64, det: f64 },

    #[error("transport weights infeasible: mass mismatch {mismatch} exceeds 1e-12")]
    InfeasibleWeights { mismatch: f64 },

    #[error("quadrature unresolved: refinement estimate {estimate} above budget {budget}")]
    QuadratureUnresolved { estimate: f64, budget: f64 },

    #[error("configuration error{}: {reason}", field.as_ref().map(|f| format!(" in `{f}`")).unwrap_or_default())]
    Config { field: Option<String>, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl LabError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        LabError::Config {
            field: Some(field.into()),
            reason: reason.into(),
        }
    }

    pub fn config_plain(reason: impl Into<String>) -> Self {
        LabError::Config {
            field: None,
            reason: reason.into(),
        }
    }
}
