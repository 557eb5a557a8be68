//! Closed-loop executor: zero-order hold of the control input between
//! controller samples, adaptive integration of the plant, dense trace
//! recording on a uniform output grid.

use crate::error::SimError;
use crate::integrate::{integrate_segment, IntegrateError, OdeOptions};
use crate::ofo::{controller_step, ControllerState, MeasuredPlant, OfoConfig};
use crate::plant::{calibrated_default, derivatives, CompressorParams, PlantState};
use nalgebra::Vector4;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

/// Setpoint trajectory for the suction pressure, in Pa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Setpoint {
    /// Constant reference.
    Constant(f64),
    /// Truncated sinusoid `max(0.94, 0.95 + 0.05 sin(0.04 t))` bar.
    Sine,
    /// Three-level step profile.
    Step,
    /// Piecewise-linear table of `(t, value_pa)` pairs.
    Table(Vec<(f64, f64)>),
}

impl Setpoint {
    /// The constant tuning reference, 0.925 bar.
    pub fn constant() -> Self {
        Setpoint::Constant(0.925e5)
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Setpoint::Constant(v) => *v,
            Setpoint::Sine => 1.0e5 * (0.95 + 0.05 * (0.04 * t).sin()).max(0.94),
            Setpoint::Step => {
                if (75.0..=125.0).contains(&t) {
                    0.93e5
                } else if t <= 150.0 {
                    0.98e5
                } else {
                    0.95e5
                }
            }
            Setpoint::Table(points) => {
                if points.is_empty() {
                    return 0.0;
                }
                if t <= points[0].0 {
                    return points[0].1;
                }
                for pair in points.windows(2) {
                    let (t0, v0) = pair[0];
                    let (t1, v1) = pair[1];
                    if t <= t1 {
                        if t1 <= t0 {
                            return v1;
                        }
                        return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
                    }
                }
                points[points.len() - 1].1
            }
        }
    }

    /// Parse a CLI selector: `constant`, `sine`, or `step`.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "constant" => Some(Setpoint::constant()),
            "sine" => Some(Setpoint::Sine),
            "step" => Some(Setpoint::Step),
            _ => None,
        }
    }
}

/// Simulation horizon, tolerances, and initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    /// Horizon, s.
    pub t_final: f64,
    /// Output grid spacing, s (refined to the sampling time when that is
    /// smaller).
    pub dt_out: f64,
    /// Relative integration tolerance.
    pub rtol: f64,
    /// Absolute tolerance as a fraction of each state's initial scale.
    pub atol_rel: f64,
    pub initial_state: PlantState,
    /// Input held before the first controller execution and used as the
    /// controller's starting point, Nm.
    pub initial_torque: f64,
}

impl SimSpec {
    pub fn new(initial_state: PlantState, initial_torque: f64) -> Self {
        Self {
            t_final: 200.0,
            dt_out: 0.01,
            rtol: 1.0e-6,
            atol_rel: 1.0e-8,
            initial_state,
            initial_torque,
        }
    }

    /// Start at the calibrated default steady state.
    pub fn at_calibrated_steady_state() -> Self {
        let cal = calibrated_default();
        Self::new(cal.steady_state, cal.steady_torque)
    }

    /// Start at the validation operating point (higher flow and speed, lower
    /// suction pressure), with the matching reaction torque as the initial
    /// input.
    pub fn at_validation_state(params: &CompressorParams) -> Self {
        let state = PlantState::new(0.91745e5, 2.0e5, 80.0, 700.5);
        let torque = params.delta * state.omega * state.m;
        Self::new(state, torque)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.t_final > 0.0) {
            return Err(format!("t_final must be positive, got {}", self.t_final));
        }
        if !(self.dt_out > 0.0) {
            return Err(format!("dt_out must be positive, got {}", self.dt_out));
        }
        if !(self.rtol > 0.0 && self.atol_rel > 0.0) {
            return Err("tolerances must be positive".into());
        }
        Ok(())
    }

    fn atol(&self) -> Vector4<f64> {
        let x0 = self.initial_state.as_vector();
        Vector4::from_fn(|i, _| self.atol_rel * x0[i].abs().max(1.0))
    }
}

/// Time-indexed record of a closed-loop run. All series share one uniform
/// grid; pressures in Pa, torque in Nm.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub t: Vec<f64>,
    pub ps: Vec<f64>,
    pub pd: Vec<f64>,
    pub m: Vec<f64>,
    pub omega: Vec<f64>,
    pub u_applied: Vec<f64>,
    pub ysp: Vec<f64>,
}

impl Trace {
    fn with_capacity(n: usize) -> Self {
        Self {
            t: Vec::with_capacity(n),
            ps: Vec::with_capacity(n),
            pd: Vec::with_capacity(n),
            m: Vec::with_capacity(n),
            omega: Vec::with_capacity(n),
            u_applied: Vec::with_capacity(n),
            ysp: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn push(&mut self, t: f64, x: &Vector4<f64>, u: f64, ysp: f64) {
        self.t.push(t);
        self.ps.push(x[0]);
        self.pd.push(x[1]);
        self.m.push(x[2]);
        self.omega.push(x[3]);
        self.u_applied.push(u);
        self.ysp.push(ysp);
    }

    /// CSV with 12 significant digits, SI units.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "t,ps,pd,m,omega,u_applied,ysp")?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{:.11e},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e}",
                self.t[i],
                self.ps[i],
                self.pd[i],
                self.m[i],
                self.omega[i],
                self.u_applied[i],
                self.ysp[i]
            )?;
        }
        Ok(())
    }
}

/// Number of grid cells covering the horizon, robust to the usual binary
/// representation slop of decimal spacings.
fn grid_cells(t_final: f64, dt: f64) -> usize {
    let raw = t_final / dt;
    let rounded = raw.round();
    if (raw - rounded).abs() < 1.0e-9 * raw.abs().max(1.0) {
        rounded as usize
    } else {
        raw.floor() as usize
    }
}

/// Run the closed loop: the controller executes at `t = k dt` for
/// `k = 0, 1, ...` strictly below the horizon, using the measurement at that
/// instant; the input is held constant in between.
pub fn run_closed_loop(
    spec: &SimSpec,
    cfg: &OfoConfig,
    setpoint: &Setpoint,
    params: &CompressorParams,
) -> Result<Trace, SimError> {
    cfg.validate().map_err(SimError::BadSpec)?;
    if cfg.dt > spec.t_final {
        return Err(SimError::BadSpec(format!(
            "sampling time {} exceeds the horizon {}",
            cfg.dt, spec.t_final
        )));
    }
    run_loop(spec, Some(cfg), setpoint, params)
}

/// Integrate the plant with a fixed input and no controller.
pub fn run_open_loop(
    spec: &SimSpec,
    setpoint: &Setpoint,
    params: &CompressorParams,
) -> Result<Trace, SimError> {
    run_loop(spec, None, setpoint, params)
}

fn run_loop(
    spec: &SimSpec,
    cfg: Option<&OfoConfig>,
    setpoint: &Setpoint,
    params: &CompressorParams,
) -> Result<Trace, SimError> {
    spec.validate().map_err(SimError::BadSpec)?;
    params
        .validate()
        .map_err(|m| SimError::BadSpec(format!("invalid plant parameters: {m}")))?;
    spec.initial_state
        .check_invariants()
        .map_err(|m| SimError::BadSpec(format!("invalid initial state: {m}")))?;

    let dt_ctrl = cfg.map(|c| c.dt);
    let dt_eff = match dt_ctrl {
        Some(dtc) if dtc < spec.dt_out => dtc,
        _ => spec.dt_out,
    };
    let n_cells = grid_cells(spec.t_final, dt_eff);
    let mut trace = Trace::with_capacity(n_cells + 1);

    let mut x = spec.initial_state.as_vector();
    let mut ctrl = ControllerState::new(spec.initial_torque);
    let mut h_carry: Option<f64> = None;
    let mut next_idx: usize = 0;
    let time_tol = 1.0e-9 * spec.t_final.max(1.0);

    let opts_template = OdeOptions::new(spec.rtol, spec.atol());
    let f = |x: &Vector4<f64>, u: f64| -> Result<Vector4<f64>, String> {
        derivatives(&PlantState::from_vector(x), u, params).map_err(|e| e.to_string())
    };

    let mut k: u64 = 0;
    loop {
        let t_k = match dt_ctrl {
            Some(dtc) => k as f64 * dtc,
            None => {
                if k > 0 {
                    spec.t_final
                } else {
                    0.0
                }
            }
        };
        if t_k >= spec.t_final - time_tol {
            break;
        }
        if let Some(c) = cfg {
            let measured = MeasuredPlant {
                params,
                m: x[2],
                pd: x[1],
                omega: x[3],
            };
            ctrl = controller_step(&ctrl, x[0], setpoint.value(t_k), &measured, c).map_err(
                |e| SimError::Fault {
                    t: t_k,
                    reason: e.to_string(),
                },
            )?;
        }
        let u = ctrl.u;

        // grid sample exactly at the event instant carries the new input
        while next_idx <= n_cells && next_idx as f64 * dt_eff <= t_k + time_tol {
            let tg = next_idx as f64 * dt_eff;
            trace.push(tg, &x, u, setpoint.value(tg));
            next_idx += 1;
        }

        let t_end = match dt_ctrl {
            Some(dtc) => ((k + 1) as f64 * dtc).min(spec.t_final),
            None => spec.t_final,
        };
        let final_segment = t_end >= spec.t_final - time_tol;
        let record_cap = if final_segment {
            spec.t_final + time_tol
        } else {
            t_end - time_tol
        };

        let mut opts = opts_template.clone();
        opts.h_init = h_carry;
        let mut fault: Option<String> = None;
        let seg = integrate_segment(
            |_t, xs| match f(xs, u) {
                Ok(r) => r,
                Err(msg) => {
                    if fault.is_none() {
                        fault = Some(msg);
                    }
                    Vector4::zeros()
                }
            },
            t_k,
            t_end,
            x,
            &opts,
            |dense, end_state| {
                while next_idx <= n_cells {
                    let tg = next_idx as f64 * dt_eff;
                    if tg > dense.t + dense.h + time_tol || tg > record_cap {
                        break;
                    }
                    let xv = dense.eval(tg);
                    trace.push(tg, &xv, u, setpoint.value(tg));
                    next_idx += 1;
                }
                PlantState::from_vector(end_state).check_invariants()
            },
        );
        if let Some(msg) = fault {
            return Err(SimError::Fault {
                t: t_k,
                reason: msg,
            });
        }
        let seg = seg.map_err(|e| match e {
            IntegrateError::Rejected { t, reason } => SimError::Fault { t, reason },
            other => SimError::Fault {
                t: t_k,
                reason: other.to_string(),
            },
        })?;
        x = seg.state;
        h_carry = Some(seg.h_last);
        k += 1;
        if final_segment {
            break;
        }
    }

    // trailing grid samples (the horizon endpoint)
    while next_idx <= n_cells {
        let tg = next_idx as f64 * dt_eff;
        trace.push(tg, &x, ctrl.u, setpoint.value(tg));
        next_idx += 1;
    }
    debug_assert_eq!(trace.len(), n_cells + 1);
    Ok(trace)
}
