//! Closed-loop simulation and tuning of an online feedback optimization (OFO)
//! controller on a centrifugal-compressor suction-pressure tracking problem.
//!
//! The crate is organised around the control loop:
//!
//! * [`plant`] — compressor dynamics, steady-state input/output map and its
//!   sensitivity, linearization, and a calibration routine that pins the
//!   surrogate constants to the reference operating point.
//! * [`ofo`] — the controller: tracking objective, steepest-descent update,
//!   general constrained quadratic-program variant, input saturation.
//! * [`simloop`] — zero-order-hold closed-loop executor with adaptive
//!   Runge-Kutta integration and dense trace recording.
//! * [`metrics`] — integrated squared error and oscillation counting over
//!   recorded traces.
//! * [`tuner`] — derivative-free search maximizing the controller sampling
//!   time subject to error/oscillation thresholds, plus grid sweeps.
//!
//! All operations are deterministic: identical inputs produce bit-identical
//! outputs, which the tuner and the command-line front end rely on.

pub mod config;
pub mod error;
pub mod integrate;
pub mod metrics;
pub mod ofo;
pub mod plant;
pub mod qp;
pub mod simloop;
pub mod tuner;

pub use error::{ConfigError, OfoError, PlantError, QpError, SimError};
pub use metrics::{beta1_baseline, ise, oscillations, MetricConfig, MetricsReport};
pub use ofo::{ControllerState, MeasuredPlant, OfoConfig, PressureUnit, QpConfig};
pub use plant::{
    calibrate, calibrated_default, Calibration, CalibrationTargets, CompressorParams,
    Linearization, PlantState,
};
pub use simloop::{run_closed_loop, run_open_loop, Setpoint, SimSpec, Trace};
pub use tuner::{sweep, tune, tune_with, Evaluation, TuneResult, TuneSpec};

/// Pascal per bar; pressures cross the I/O boundary in bar, all internal
/// computation is in SI.
pub const PA_PER_BAR: f64 = 1.0e5;
