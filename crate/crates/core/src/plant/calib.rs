//! Calibration of the surrogate plant constants.
//!
//! The reference operating data fix the valve characteristics and one point
//! of the compressor map; the remaining map shape is pinned by requiring the
//! equilibrium manifold to pass through a second anchor (the validation
//! operating point) and by a target input-output gain at the operating point.
//! The shaft inertia is then tuned by a secant iteration until the linearized
//! suction-pressure step response settles in the target time.
//!
//! Everything here is closed-form or a deterministic scalar iteration, so a
//! given target set always produces bit-identical parameters.

use super::{
    compressor_map, compressor_map_gradient, derivatives, equilibrium, linear::settling_time,
    linearize, sensitivity, CompressorParams, PlantState,
};
use crate::error::PlantError;
use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};

/// Steady-state and response targets for [`calibrate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationTargets {
    /// Steady suction pressure, Pa.
    pub ps0: f64,
    /// Steady discharge pressure, Pa.
    pub pd0: f64,
    /// Steady mass flow, kg/s.
    pub m0: f64,
    /// Steady shaft speed, rad/s.
    pub omega0: f64,
    /// Steady torque, Nm. `None` derives `delta * omega0 * m0`; an explicit
    /// value inconsistent with the torque balance is rejected.
    pub tau0: Option<f64>,
    /// Settling-time goal for the linearized suction-pressure step response, s.
    pub settling_s: f64,
    /// Second equilibrium anchor `(m, omega)` the map must pass through.
    pub anchor: (f64, f64),
    /// Map speed-slope at the operating point (sets the controller gain scale).
    pub map_speed_slope: f64,
    /// Fixed geometry: (a01, vs, vd, a1, lc, ain, aout).
    pub geometry: Geometry,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Geometry {
    pub a01: f64,
    pub vs: f64,
    pub vd: f64,
    pub a1: f64,
    pub lc: f64,
    pub ain: f64,
    pub aout: f64,
    pub delta: f64,
    pub pin: f64,
    pub pout: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            a01: 100.0,
            vs: 20.0,
            vd: 10.0,
            a1: 0.01,
            lc: 100.0,
            ain: 0.1,
            aout: 0.1,
            delta: 0.00729,
            pin: 1.05e5,
            pout: 1.55e5,
        }
    }
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self {
            ps0: 1.015e5,
            pd0: 1.868e5,
            m0: 60.45,
            omega0: 647.2,
            tau0: None,
            settling_s: 47.5,
            anchor: (80.0, 700.5),
            map_speed_slope: 12.0,
            geometry: Geometry::default(),
        }
    }
}

/// Calibration output: the parameter set plus the verified operating point.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub params: CompressorParams,
    pub steady_state: PlantState,
    pub steady_torque: f64,
    pub report: CalibrationReport,
}

/// Residuals and achieved response figures, for the human-readable report.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    /// Steady-state residuals, relative to each state's scale.
    pub relative_residuals: [f64; 4],
    pub settling_s: f64,
    pub settling_goal_s: f64,
    pub shaft_inertia: f64,
    pub eigenvalue_real_parts: Vec<f64>,
    /// Model sensitivity d ps/d tau at the operating point, Pa/Nm.
    pub sensitivity_pa_per_nm: f64,
    pub secant_iterations: usize,
}

impl std::fmt::Display for CalibrationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "calibration report")?;
        writeln!(
            f,
            "  steady-state relative residuals: ps {:.3e}  pd {:.3e}  m {:.3e}  omega {:.3e}",
            self.relative_residuals[0],
            self.relative_residuals[1],
            self.relative_residuals[2],
            self.relative_residuals[3]
        )?;
        writeln!(
            f,
            "  settling time: {:.3} s (goal {:.3} s), shaft inertia {:.4} kg m^2 ({} secant iterations)",
            self.settling_s, self.settling_goal_s, self.shaft_inertia, self.secant_iterations
        )?;
        writeln!(
            f,
            "  sensitivity at operating point: {:.4} Pa/Nm",
            self.sensitivity_pa_per_nm
        )?;
        write!(f, "  eigenvalue real parts:")?;
        for re in &self.eigenvalue_real_parts {
            write!(f, " {re:.4}")?;
        }
        Ok(())
    }
}

/// Solve for a parameter set meeting the targets.
pub fn calibrate(targets: &CalibrationTargets) -> Result<Calibration, PlantError> {
    let g = &targets.geometry;
    let (ps0, pd0, m0, om0) = (targets.ps0, targets.pd0, targets.m0, targets.omega0);

    // --- feasibility of the flow balances -------------------------------
    if !(m0 > 0.0) {
        return Err(PlantError::Calibration(format!(
            "target mass flow must be positive, got {m0}"
        )));
    }
    if !(ps0 < g.pin) {
        return Err(PlantError::Calibration(format!(
            "inflow cannot match the target: requires ps0 < pin, got ps0 = {ps0}, pin = {}",
            g.pin
        )));
    }
    if !(pd0 > g.pout) {
        return Err(PlantError::Calibration(format!(
            "outflow cannot match the target: requires pd0 > pout, got pd0 = {pd0}, pout = {}",
            g.pout
        )));
    }
    let tau0 = g.delta * om0 * m0;
    if let Some(t) = targets.tau0 {
        let mismatch = (t - tau0).abs();
        if mismatch > 1.0e-9 * tau0.abs().max(1.0) {
            return Err(PlantError::Calibration(format!(
                "torque target {t} Nm is inconsistent with the torque balance \
                 delta*omega0*m0 = {tau0:.6} Nm (residual {mismatch:.3e} Nm); \
                 the shaft balance cannot vanish at this state"
            )));
        }
    }

    // --- valves: pass m0 exactly at the target pressures ----------------
    let kin = m0 / (0.4 * g.ain * (g.pin - ps0).sqrt());
    let kout = m0 / (0.8 * g.aout * (pd0 - g.pout).sqrt());

    // --- compressor map ---------------------------------------------------
    // Valve-implied equilibrium manifold: ps(m) = pin - (m/KAin)^2,
    // pd(m) = pout + (m/KAout)^2, so the map must equal pd(m)/ps(m) along it.
    let ka_in = 0.4 * kin * g.ain;
    let ka_out = 0.8 * kout * g.aout;
    let ps_of = |m: f64| g.pin - (m / ka_in).powi(2);
    let pd_of = |m: f64| g.pout + (m / ka_out).powi(2);
    let pi_eq = |m: f64| pd_of(m) / ps_of(m);
    let dpi_eq = |m: f64| {
        let ps = ps_of(m);
        let dps = -2.0 * (g.pin - ps) / m;
        let dpd = 2.0 * (pd_of(m) - g.pout) / m;
        (dpd * ps - pd_of(m) * dps) / (ps * ps)
    };

    let (m2, om2) = targets.anchor;
    if !(m2 > 0.0 && m2 < ka_in * g.pin.sqrt()) {
        return Err(PlantError::Calibration(format!(
            "anchor flow {m2} kg/s is outside the admissible valve range"
        )));
    }
    if (m2 - m0).abs() < 1.0e-9 {
        return Err(PlantError::Calibration(
            "anchor must differ from the operating point in mass flow".into(),
        ));
    }
    let pi1 = pd0 / ps0;
    let pi2 = pi_eq(m2);
    if pi1 <= 1.0 {
        return Err(PlantError::Calibration(format!(
            "target pressure ratio {pi1:.4} is not above unity"
        )));
    }
    let w = targets.map_speed_slope;
    let s_ridge = (om2 - om0) / (m2 - m0);
    let sigma1 = dpi_eq(m0);
    // Quadratic-in-m, linear-in-omega surface through both anchors with the
    // prescribed speed slope and an operating-point flow slope matching the
    // equilibrium manifold direction.
    let c3 = w;
    let c4 = ((pi2 - pi1) / (m2 - m0) - sigma1) / (m2 - m0);
    let c2 = sigma1 - s_ridge * w - 2.0 * c4 * m0;
    let c1 = pi1 - c2 * m0 - c3 * om0 - c4 * m0 * m0;
    let map_coeffs = [c1, c2, c3, c4, 0.0, 0.0];

    let base = CompressorParams {
        a01: g.a01,
        vs: g.vs,
        vd: g.vd,
        a1: g.a1,
        lc: g.lc,
        j: 1.0, // placeholder until the secant fixes it
        delta: g.delta,
        kin,
        kout,
        ain: g.ain,
        aout: g.aout,
        pin: g.pin,
        pout: g.pout,
        map_coeffs,
    };

    // --- shaft inertia by secant on the settling time -------------------
    // Initial guess from the slow-manifold shaft pole
    // lambda = -delta (m0 + omega0 dm/domega) / J.
    let (pi_m, pi_w) = compressor_map_gradient(m0, om0, &base);
    let dps_dm = -2.0 * (g.pin - ps0) / m0;
    let dpd_dm = 2.0 * (pd0 - g.pout) / m0;
    let denom = pi_m * ps0 + pi1 * dps_dm - dpd_dm;
    let dm_domega = -pi_w * ps0 / denom;
    if !(dm_domega > 0.0) {
        return Err(PlantError::Calibration(format!(
            "map shape gives non-positive flow/speed gain {dm_domega:.3e}; \
             increase the speed slope or adjust the anchor"
        )));
    }
    let lambda_goal = -(0.05f64).ln() / targets.settling_s;
    let j_guess = g.delta * (m0 + om0 * dm_domega) / lambda_goal;

    let settle_for = |j: f64| -> Result<f64, PlantError> {
        let mut p = base.clone();
        p.j = j;
        settling_time(&p, tau0)
    };
    let mut j0 = j_guess;
    let mut f0 = settle_for(j0)? - targets.settling_s;
    let mut j1 = j_guess * 1.05;
    let mut f1 = settle_for(j1)? - targets.settling_s;
    let mut iterations = 2usize;
    while f1.abs() > 1.0e-3 && iterations < 60 {
        let df = f1 - f0;
        if df.abs() < 1.0e-12 {
            break;
        }
        let j_next = (j1 - f1 * (j1 - j0) / df).max(0.05 * j_guess);
        j0 = j1;
        f0 = f1;
        j1 = j_next;
        f1 = settle_for(j1)? - targets.settling_s;
        iterations += 1;
    }
    let achieved = f1 + targets.settling_s;
    if (achieved - targets.settling_s).abs() > 0.5 {
        return Err(PlantError::Calibration(format!(
            "settling-time iteration did not converge: achieved {achieved:.3} s \
             against goal {} s",
            targets.settling_s
        )));
    }
    let mut params = base;
    params.j = j1;
    params
        .validate()
        .map_err(PlantError::Calibration)?;

    // --- verification ----------------------------------------------------
    let steady = PlantState::new(ps0, pd0, m0, om0);
    let rate = derivatives(&steady, tau0, &params)?;
    let scale = [ps0, pd0, m0, om0];
    let mut rel = [0.0; 4];
    for i in 0..4 {
        rel[i] = (rate[i] / scale[i]).abs();
    }
    if rel.iter().any(|r| *r > 1.0e-8) {
        return Err(PlantError::Calibration(format!(
            "steady-state residuals too large: {rel:?}"
        )));
    }
    let lin = linearize(&steady, tau0, &params)?;
    let eig = lin.eigenvalue_real_parts();
    if eig[0] >= 0.0 {
        return Err(PlantError::Calibration(format!(
            "calibrated operating point is not stable: max Re(lambda) = {:.3e}",
            eig[0]
        )));
    }
    // the calibrated equilibrium must be recoverable from the torque alone
    let eq = equilibrium(tau0, &params)?;
    if (eq.m - m0).abs() > 1.0e-6 * m0 {
        return Err(PlantError::Calibration(format!(
            "equilibrium solve disagrees with the target state: m = {} vs {}",
            eq.m, m0
        )));
    }
    if compressor_map(m0, om0, &params) <= 1.0 {
        return Err(PlantError::Calibration(
            "calibrated map does not exceed unity at the operating point".into(),
        ));
    }

    let report = CalibrationReport {
        relative_residuals: rel,
        settling_s: achieved,
        settling_goal_s: targets.settling_s,
        shaft_inertia: params.j,
        eigenvalue_real_parts: eig,
        sensitivity_pa_per_nm: sensitivity(tau0, m0, pd0, &params)?,
        secant_iterations: iterations,
    };
    Ok(Calibration {
        params,
        steady_state: steady,
        steady_torque: tau0,
        report,
    })
}

static DEFAULT_CALIBRATION: Lazy<Calibration> = Lazy::new(|| {
    calibrate(&CalibrationTargets::default())
        .expect("default calibration targets are feasible by construction")
});

/// The calibration for the default target set, computed once per process.
pub fn calibrated_default() -> &'static Calibration {
    &DEFAULT_CALIBRATION
}
