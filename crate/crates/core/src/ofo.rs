//! The online feedback optimization controller.
//!
//! Each sampling instant the controller reads the measured output, forms the
//! tracking-objective gradient, pulls it back through the plant's steady-state
//! sensitivity, and applies a saturated input update. Two variants share the
//! machinery: the reduced steepest-descent form driven by the single gain
//! `nu = alpha / G`, and the general form that solves a small constrained
//! quadratic program per step.

use crate::error::{OfoError, QpError};
use crate::plant::{sensitivity, CompressorParams};
use crate::qp;
use crate::PA_PER_BAR;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Pressure unit in which the objective and its gradient are evaluated.
///
/// The gain tables for this controller assume bar; the integrated-error
/// metric is independent of this choice and always uses Pa.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PressureUnit {
    #[default]
    Bar,
    Pa,
}

impl PressureUnit {
    /// Convert a value expressed in Pa into this unit.
    pub fn from_pa(self, value_pa: f64) -> f64 {
        match self {
            PressureUnit::Bar => value_pa / PA_PER_BAR,
            PressureUnit::Pa => value_pa,
        }
    }
}

/// Optional data for the constrained quadratic-program update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpConfig {
    /// Step size applied to the QP minimizer.
    pub alpha: f64,
    /// Positive-definite weight (p x p).
    pub g: Vec<Vec<f64>>,
    /// Input-constraint rows `A u <= b`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    /// Output-constraint rows `C y <= d`.
    pub c: Vec<Vec<f64>>,
    pub d: Vec<f64>,
}

impl QpConfig {
    fn g_matrix(&self) -> DMatrix<f64> {
        let p = self.g.len();
        DMatrix::from_fn(p, p, |r, c| self.g[r][c])
    }
}

/// Controller configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfoConfig {
    /// Effective step-size product of the reduced update, >= 0.
    pub nu: f64,
    /// Sampling time, s.
    pub dt: f64,
    /// Lower input bound, Nm.
    pub u_min: f64,
    /// Upper input bound, Nm.
    pub u_max: f64,
    /// Unit of the pressures entering the objective gradient.
    #[serde(default)]
    pub gradient_pressure_unit: PressureUnit,
    /// When present, each step solves the constrained QP instead of the
    /// reduced steepest-descent form.
    #[serde(default)]
    pub qp: Option<QpConfig>,
}

impl OfoConfig {
    pub fn new(nu: f64, dt: f64) -> Self {
        Self {
            nu,
            dt,
            u_min: -300.0,
            u_max: 1000.0,
            gradient_pressure_unit: PressureUnit::Bar,
            qp: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.nu >= 0.0) || !self.nu.is_finite() {
            return Err(format!("nu must be non-negative, got {}", self.nu));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.u_min < self.u_max) {
            return Err(format!(
                "input bounds must satisfy u_min < u_max, got [{}, {}]",
                self.u_min, self.u_max
            ));
        }
        if let Some(qp) = &self.qp {
            if !(qp.alpha > 0.0) {
                return Err(format!("qp.alpha must be positive, got {}", qp.alpha));
            }
            let p = qp.g.len();
            if p == 0 || qp.g.iter().any(|row| row.len() != p) {
                return Err("qp.g must be square and non-empty".into());
            }
            let eig = qp.g_matrix().symmetric_eigenvalues();
            if eig.iter().any(|&e| e <= 0.0) {
                return Err("qp.g must be positive-definite".into());
            }
        }
        Ok(())
    }
}

impl Default for OfoConfig {
    fn default() -> Self {
        Self::new(0.1, 50.0)
    }
}

/// Controller state carried between samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    /// Current input, Nm.
    pub u: f64,
    /// Iteration index.
    pub k: u64,
}

impl ControllerState {
    pub fn new(u: f64) -> Self {
        Self { u, k: 0 }
    }
}

/// Tracking objective `Phi = 0.01 (ps - psd)^2`, pressures in the configured
/// gradient unit.
pub fn objective(ps: f64, psd: f64) -> f64 {
    0.01 * (ps - psd) * (ps - psd)
}

/// Gradient of the objective: `(dPhi/du, dPhi/dy)`. The objective does not
/// depend on the input directly.
pub fn objective_gradient(ps: f64, psd: f64) -> (f64, f64) {
    (0.0, 0.02 * (ps - psd))
}

/// Applied increment of the reduced steepest-descent update:
/// `-nu * sens * dPhi/dy`. All pressure quantities in the configured unit.
pub fn descent_increment(y: f64, ysp: f64, sens: f64, cfg: &OfoConfig) -> f64 {
    let (_, dphi_dy) = objective_gradient(y, ysp);
    -cfg.nu * sens * dphi_dy
}

/// Minimizer of the per-step constrained quadratic program:
/// `min || w + G^-1 H' grad' ||_G^2` subject to `A(u + alpha w) <= b` and
/// `C(y + alpha sens w) <= d`.
///
/// `grad` stacks the input and output parts of the objective gradient;
/// `sens` is the output-input sensitivity (n x p).
pub fn qp_direction(
    u: &DVector<f64>,
    y: &DVector<f64>,
    grad_u: &DVector<f64>,
    grad_y: &DVector<f64>,
    sens: &DMatrix<f64>,
    cfg: &QpConfig,
) -> Result<DVector<f64>, QpError> {
    let p = u.len();
    let n = y.len();
    if sens.nrows() != n || sens.ncols() != p {
        return Err(QpError::BadProblem(format!(
            "sensitivity must be {n}x{p}, got {}x{}",
            sens.nrows(),
            sens.ncols()
        )));
    }
    let g = cfg.g_matrix();
    // H' grad' = grad_u + sens' grad_y
    let h = grad_u + sens.transpose() * grad_y;

    let qa = cfg.a.len();
    let qc = cfg.c.len();
    let mut e = DMatrix::zeros(qa + qc, p);
    let mut f = DVector::zeros(qa + qc);
    for (r, row) in cfg.a.iter().enumerate() {
        if row.len() != p {
            return Err(QpError::BadProblem("A row width mismatch".into()));
        }
        let mut au = 0.0;
        for (cidx, &v) in row.iter().enumerate() {
            e[(r, cidx)] = cfg.alpha * v;
            au += v * u[cidx];
        }
        f[r] = cfg.b[r] - au;
    }
    for (r, row) in cfg.c.iter().enumerate() {
        if row.len() != n {
            return Err(QpError::BadProblem("C row width mismatch".into()));
        }
        let mut cy = 0.0;
        for (j, &v) in row.iter().enumerate() {
            cy += v * y[j];
            for col in 0..p {
                e[(qa + r, col)] += cfg.alpha * v * sens[(j, col)];
            }
        }
        f[qa + r] = cfg.d[r] - cy;
    }
    // || w + G^-1 h ||_G^2 expands to w'Gw + 2 w'h + const, so the QP below
    // shares its minimizer.
    Ok(qp::solve(&g, &h, &e, &f)?.w)
}

/// Clamp an input to the physical actuator range.
pub fn saturate(u: f64, cfg: &OfoConfig) -> f64 {
    u.clamp(cfg.u_min, cfg.u_max)
}

/// Measured plant quantities available to the controller at a sampling
/// instant, plus the model used to linearize the steady-state map.
///
/// The sensitivity is evaluated at the measured operating torque
/// `delta * omega * m` (the reaction torque actually sustained by the plant),
/// which keeps the map evaluation on the measured operating point.
#[derive(Debug, Clone, Copy)]
pub struct MeasuredPlant<'a> {
    pub params: &'a CompressorParams,
    /// Measured mass flow, kg/s.
    pub m: f64,
    /// Measured discharge pressure, Pa.
    pub pd: f64,
    /// Measured shaft speed, rad/s.
    pub omega: f64,
}

impl MeasuredPlant<'_> {
    /// Input-output sensitivity at the measured operating point, Pa/Nm.
    pub fn sensitivity_pa(&self) -> Result<f64, crate::error::PlantError> {
        let tau_meas = self.params.delta * self.omega * self.m;
        sensitivity(tau_meas, self.m, self.pd, self.params)
    }
}

/// One controller execution: measure, update, saturate.
///
/// `y_meas` and `ysp` are in Pa; unit conversion to the configured gradient
/// unit happens inside.
pub fn controller_step(
    state: &ControllerState,
    y_meas_pa: f64,
    ysp_pa: f64,
    plant: &MeasuredPlant<'_>,
    cfg: &OfoConfig,
) -> Result<ControllerState, OfoError> {
    if !y_meas_pa.is_finite() {
        return Err(OfoError::BadConfig(format!(
            "non-finite measurement {y_meas_pa}"
        )));
    }
    let unit = cfg.gradient_pressure_unit;
    let sens_pa = plant.sensitivity_pa()?;
    // d ps / d tau in the gradient unit
    let sens = match unit {
        PressureUnit::Bar => sens_pa / PA_PER_BAR,
        PressureUnit::Pa => sens_pa,
    };
    let y = unit.from_pa(y_meas_pa);
    let ysp = unit.from_pa(ysp_pa);

    let increment = match &cfg.qp {
        None => descent_increment(y, ysp, sens, cfg),
        Some(qpc) => {
            let (gu, gy) = objective_gradient(y, ysp);
            let w = qp_direction(
                &DVector::from_element(1, state.u),
                &DVector::from_element(1, y),
                &DVector::from_element(1, gu),
                &DVector::from_element(1, gy),
                &DMatrix::from_element(1, 1, sens),
                qpc,
            )?;
            qpc.alpha * w[0]
        }
    };
    Ok(ControllerState {
        u: saturate(state.u + increment, cfg),
        k: state.k + 1,
    })
}
