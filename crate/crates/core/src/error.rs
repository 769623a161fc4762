use thiserror::Error;

/// Errors raised by the analysis and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("metric is not symmetric positive definite at t = {t}: {reason}")]
    NonSPDMetric { t: f64, reason: String },

    #[error("no derivative source configured for {what}")]
    DerivativeUnavailable { what: &'static str },

    #[error("infeasible state: constraint `{label}` has g = {value:e} above tolerance")]
    InfeasibleState { label: String, value: f64 },

    #[error("acute corner between constraints `{first}` and `{second}` (gram entry {value:e})")]
    AcuteCorner {
        first: String,
        second: String,
        value: f64,
    },

    #[error("active-set release iteration did not converge after {passes} passes")]
    NoConvergence { passes: usize },

    #[error("step size underflow at t = {t} (dt = {dt:e})")]
    StepTooSmall { t: f64, dt: f64 },

    #[error("paired trajectories diverged: separation {separation:e} at t = {t}")]
    DivergedPair { t: f64, separation: f64 },

    #[error("constraint `{label}` is not incoming (gdot = {gdot:e})")]
    NotIncoming { label: String, gdot: f64 },

    #[error("event counts differ: {left} vs {right}")]
    EventCountMismatch { left: usize, right: usize },

    #[error("target is unreachable from source")]
    Unreachable,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("constraint tangent space is empty (all directions constrained)")]
    DegenerateTangentSpace,

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
