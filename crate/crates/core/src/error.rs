//! Error types shared across the crate.

use thiserror::Error;

/// Failures raised by plant-model evaluation and calibration.
#[derive(Debug, Clone, Error)]
pub enum PlantError {
    /// A model expression produced a non-finite value.
    #[error("numerical fault in {context}: {value}")]
    NumericalFault { context: &'static str, value: f64 },

    /// The compressor map evaluated to a non-positive pressure ratio where a
    /// positive one is required.
    #[error("compressor map out of domain: Pi = {pi:.6} at m = {m:.4} kg/s, omega = {omega:.4} rad/s")]
    MapDomain { pi: f64, m: f64, omega: f64 },

    /// A linearization required for settling-time analysis is unstable.
    #[error("unstable linearization: max eigenvalue real part {max_re:.6e} 1/s")]
    Instability { max_re: f64 },

    /// No steady state could be found for the requested input.
    #[error("no steady state found for tau = {tau:.3} Nm: {detail}")]
    Equilibrium { tau: f64, detail: String },

    /// The calibration targets cannot be met; the message carries the
    /// residual report.
    #[error("calibration failed: {0}")]
    Calibration(String),
}

/// Failures raised by the dense quadratic-program solver.
#[derive(Debug, Clone, Error)]
pub enum QpError {
    /// The constraint set admits no solution.
    #[error("QP constraints are infeasible (violation {violation:.3e} on constraint {constraint})")]
    Infeasible { constraint: usize, violation: f64 },

    /// The active-set iteration failed to terminate.
    #[error("QP solver stalled after {iterations} iterations")]
    Stalled { iterations: usize },

    /// Shapes or conditioning of the inputs are invalid.
    #[error("invalid QP data: {0}")]
    BadProblem(String),
}

/// Failures raised by a controller step.
#[derive(Debug, Clone, Error)]
pub enum OfoError {
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("invalid controller configuration: {0}")]
    BadConfig(String),
}

/// Failures raised by closed-loop simulation.
#[derive(Debug, Clone, Error)]
pub enum SimError {
    /// Integration aborted at time `t`: invariant violation, step-size
    /// underflow, or a controller fault.
    #[error("simulation fault at t = {t:.6} s: {reason}")]
    Fault { t: f64, reason: String },

    /// The simulation specification itself is invalid.
    #[error("invalid simulation spec: {0}")]
    BadSpec(String),
}

/// Failures raised when reading or writing configuration files.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("invalid value: {0}")]
    Invalid(String),
}
