//! Centrifugal-compressor plant model.
//!
//! Four states: suction pressure `ps`, discharge pressure `pd`, compressor
//! mass flow `m`, shaft speed `omega`. The torque input `tau` enters the
//! shaft balance against the reaction torque `delta * omega * m`; boundary
//! valves exchange mass with fixed external pressures; the compressor map
//! `Pi(m, omega)` is a quadratic pressure-ratio surface whose coefficients
//! come from [`calibrate`].
//!
//! All operations are pure functions of their arguments.

mod calib;
mod linear;

pub use calib::{
    calibrate, calibrated_default, Calibration, CalibrationReport, CalibrationTargets, Geometry,
};
pub use linear::{linear_step_settling, linearize, settling_time, Linearization};

use crate::error::PlantError;
use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

/// Physical constants of the compressor model.
///
/// Pressures in Pa, volumes in m^3, areas in m^2, lengths in m, inertia in
/// kg m^2. `map_coeffs` are the six coefficients `c1..c6` of
/// `Pi = c1 + c2 m + c3 omega + c4 m^2 + c5 m omega + c6 omega^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressorParams {
    /// Sonic-velocity constant of the gas, m/s.
    pub a01: f64,
    /// Suction-side volume, m^3.
    pub vs: f64,
    /// Discharge-side volume, m^3.
    pub vd: f64,
    /// Compressor duct area, m^2.
    pub a1: f64,
    /// Compressor duct length, m.
    pub lc: f64,
    /// Shaft inertia, kg m^2.
    pub j: f64,
    /// Reaction-torque coefficient, dimensionless.
    pub delta: f64,
    /// Inlet valve gain.
    pub kin: f64,
    /// Outlet valve gain.
    pub kout: f64,
    /// Inlet valve area, m^2.
    pub ain: f64,
    /// Outlet valve area, m^2.
    pub aout: f64,
    /// External suction-side pressure, Pa.
    pub pin: f64,
    /// External discharge-side pressure, Pa.
    pub pout: f64,
    /// Compressor-map coefficients c1..c6.
    pub map_coeffs: [f64; 6],
}

impl CompressorParams {
    /// Check structural invariants; returns a message for the first failure.
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("a01", self.a01),
            ("vs", self.vs),
            ("vd", self.vd),
            ("a1", self.a1),
            ("lc", self.lc),
            ("j", self.j),
            ("delta", self.delta),
            ("kin", self.kin),
            ("kout", self.kout),
            ("ain", self.ain),
            ("aout", self.aout),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("{name} must be strictly positive, got {v}"));
            }
        }
        if !(self.pin < self.pout) {
            return Err(format!(
                "pin ({}) must be below pout ({})",
                self.pin, self.pout
            ));
        }
        if self.map_coeffs.iter().any(|c| !c.is_finite()) {
            return Err("map_coeffs must be finite".into());
        }
        Ok(())
    }
}

/// Plant state vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// Suction pressure, Pa.
    pub ps: f64,
    /// Discharge pressure, Pa.
    pub pd: f64,
    /// Mass flow, kg/s.
    pub m: f64,
    /// Shaft speed, rad/s.
    pub omega: f64,
}

impl PlantState {
    pub fn new(ps: f64, pd: f64, m: f64, omega: f64) -> Self {
        Self { ps, pd, m, omega }
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.ps, self.pd, self.m, self.omega)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    /// Positivity invariants that must hold along accepted trajectories
    /// (mass flow may transiently reverse; pressures and speed may not).
    pub fn check_invariants(&self) -> Result<(), String> {
        if !(self.ps > 0.0) {
            return Err(format!("suction pressure left positive domain: {}", self.ps));
        }
        if !(self.pd > 0.0) {
            return Err(format!(
                "discharge pressure left positive domain: {}",
                self.pd
            ));
        }
        if !(self.omega > 0.0) {
            return Err(format!("shaft speed left positive domain: {}", self.omega));
        }
        Ok(())
    }
}

/// Pressure ratio across the compressor: quadratic in mass flow and speed.
pub fn compressor_map(m: f64, omega: f64, params: &CompressorParams) -> f64 {
    let [c1, c2, c3, c4, c5, c6] = params.map_coeffs;
    c1 + c2 * m + c3 * omega + c4 * m * m + c5 * m * omega + c6 * omega * omega
}

/// Partial derivatives `(dPi/dm, dPi/domega)` of the map.
pub fn compressor_map_gradient(m: f64, omega: f64, params: &CompressorParams) -> (f64, f64) {
    let [_, c2, c3, c4, c5, c6] = params.map_coeffs;
    (c2 + 2.0 * c4 * m + c5 * omega, c3 + c5 * m + 2.0 * c6 * omega)
}

/// Boundary mass flows `(m_in, m_out)`; both are non-negative by
/// construction (fixed flow direction, absolute-value radicand).
pub fn external_flows(ps: f64, pd: f64, params: &CompressorParams) -> (f64, f64) {
    let m_in = 0.4 * params.kin * params.ain * (params.pin - ps).abs().sqrt();
    let m_out = 0.8 * params.kout * params.aout * (pd - params.pout).abs().sqrt();
    (m_in, m_out)
}

/// State derivative `(dps, dpd, dm, domega)/dt` for applied torque `tau`.
pub fn derivatives(
    state: &PlantState,
    tau: f64,
    params: &CompressorParams,
) -> Result<Vector4<f64>, PlantError> {
    let (m_in, m_out) = external_flows(state.ps, state.pd, params);
    let pi = compressor_map(state.m, state.omega, params);
    let tau_c = params.delta * state.omega * state.m;
    let a01_sq = params.a01 * params.a01;
    let rate = Vector4::new(
        a01_sq / params.vs * (m_in - state.m),
        a01_sq / params.vd * (state.m - m_out),
        params.a1 / params.lc * (pi * state.ps - state.pd),
        (tau - tau_c) / params.j,
    );
    for (i, name) in ["dps", "dpd", "dm", "domega"].iter().enumerate() {
        if !rate[i].is_finite() {
            return Err(PlantError::NumericalFault {
                context: name,
                value: rate[i],
            });
        }
    }
    Ok(rate)
}

/// Steady-state input-output map `h(tau, m) = pd / Pi(m, tau/(delta m))`.
///
/// `m` and `pd` are treated as measured quantities; the speed is implied by
/// the torque balance.
pub fn steady_state_map(
    tau: f64,
    m: f64,
    pd: f64,
    params: &CompressorParams,
) -> Result<f64, PlantError> {
    let omega = tau / (params.delta * m);
    let pi = compressor_map(m, omega, params);
    if !(pi > 0.0) {
        return Err(PlantError::MapDomain { pi, m, omega });
    }
    Ok(pd / pi)
}

/// Sensitivity `d ps / d tau` of the steady-state map at fixed measured
/// `(m, pd)`, by the chain rule through `Pi(m, tau/(delta m))`.
pub fn sensitivity(
    tau: f64,
    m: f64,
    pd: f64,
    params: &CompressorParams,
) -> Result<f64, PlantError> {
    let omega = tau / (params.delta * m);
    let pi = compressor_map(m, omega, params);
    if !(pi > 0.0) {
        return Err(PlantError::MapDomain { pi, m, omega });
    }
    let (_, pi_omega) = compressor_map_gradient(m, omega, params);
    let s = -pd * pi_omega / (pi * pi * params.delta * m);
    if !s.is_finite() {
        return Err(PlantError::NumericalFault {
            context: "sensitivity",
            value: s,
        });
    }
    Ok(s)
}

/// Find the steady state sustained by a constant torque `tau`.
///
/// At equilibrium the valve balances give `ps` and `pd` as functions of `m`,
/// the torque balance gives `omega = tau/(delta m)`, and the momentum balance
/// closes a single scalar equation in `m`, solved by bisection.
pub fn equilibrium(tau: f64, params: &CompressorParams) -> Result<PlantState, PlantError> {
    if tau <= 0.0 {
        return Err(PlantError::Equilibrium {
            tau,
            detail: "no positive-speed steady state for non-positive torque".into(),
        });
    }
    let ka_in = 0.4 * params.kin * params.ain;
    let ka_out = 0.8 * params.kout * params.aout;
    let ps_of = |m: f64| params.pin - (m / ka_in).powi(2);
    let pd_of = |m: f64| params.pout + (m / ka_out).powi(2);
    let residual = |m: f64| -> f64 {
        let omega = tau / (params.delta * m);
        compressor_map(m, omega, params) * ps_of(m) - pd_of(m)
    };
    // bracket in (0, m_max) where ps stays positive
    let m_max = ka_in * params.pin.sqrt() * 0.999;
    let mut lo = 1.0e-6 * m_max;
    let mut hi = m_max;
    let (rlo, rhi) = (residual(lo), residual(hi));
    if !(rlo > 0.0 && rhi < 0.0) {
        return Err(PlantError::Equilibrium {
            tau,
            detail: format!("no sign change on bracket: r({lo:.3e}) = {rlo:.3e}, r({hi:.3e}) = {rhi:.3e}"),
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let m = 0.5 * (lo + hi);
    let state = PlantState::new(ps_of(m), pd_of(m), m, tau / (params.delta * m));
    state
        .check_invariants()
        .map_err(|detail| PlantError::Equilibrium { tau, detail })?;
    Ok(state)
}
