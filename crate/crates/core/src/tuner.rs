//! Sampling-time tuning: maximize the controller sampling time subject to
//! tracking-error and oscillation thresholds, with a deterministic compass
//! search and extreme-barrier constraint handling, plus Cartesian parameter
//! sweeps for contour studies.

use crate::error::SimError;
use crate::metrics::{ise, oscillations, MetricConfig};
use crate::ofo::OfoConfig;
use crate::plant::CompressorParams;
use crate::simloop::{run_closed_loop, Setpoint, SimSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{self, Write};

/// Thresholds, search box, and budget of one tuning problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneSpec {
    /// Error threshold.
    pub beta1: f64,
    /// Oscillation threshold.
    pub beta2: u64,
    /// Gain box, inclusive.
    pub nu_bounds: (f64, f64),
    /// Sampling-time box, inclusive; searched in log scale.
    pub dt_bounds: (f64, f64),
    /// Starting point `(nu, dt)`.
    pub initial: (f64, f64),
    /// Maximum number of closed-loop evaluations.
    pub budget: usize,
}

impl TuneSpec {
    pub fn new(beta1: f64, beta2: u64) -> Self {
        Self {
            beta1,
            beta2,
            nu_bounds: (0.0, 1.0e3),
            dt_bounds: (5.0e-3, 100.0),
            initial: (0.1, 50.0),
            budget: 100,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.nu_bounds.0 <= self.nu_bounds.1) || !(self.dt_bounds.0 < self.dt_bounds.1) {
            return Err("bounds must be ordered".into());
        }
        if !(self.dt_bounds.0 > 0.0) {
            return Err("sampling-time bounds must be positive".into());
        }
        let (nu0, dt0) = self.initial;
        if !(self.nu_bounds.0..=self.nu_bounds.1).contains(&nu0)
            || !(self.dt_bounds.0..=self.dt_bounds.1).contains(&dt0)
        {
            return Err(format!("initial point ({nu0}, {dt0}) is outside the bounds"));
        }
        if self.budget == 0 {
            return Err("budget must be at least one evaluation".into());
        }
        Ok(())
    }
}

/// One evaluated point. Faulted simulations carry no metric values and are
/// infeasible by the extreme-barrier rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub nu: f64,
    pub dt: f64,
    pub epsilon: Option<f64>,
    pub oscillations: Option<u64>,
    pub feasible: bool,
}

impl Evaluation {
    fn from_outcome(nu: f64, dt: f64, outcome: &Result<(f64, u64), SimError>, spec: &TuneSpec) -> Self {
        match outcome {
            Ok((eps, osc)) => Evaluation {
                nu,
                dt,
                epsilon: Some(*eps),
                oscillations: Some(*osc),
                feasible: *eps <= spec.beta1 && *osc <= spec.beta2,
            },
            Err(_) => Evaluation {
                nu,
                dt,
                epsilon: None,
                oscillations: None,
                feasible: false,
            },
        }
    }

    /// Relative constraint violation; infinite for faulted runs.
    fn violation(&self, spec: &TuneSpec) -> f64 {
        match (self.epsilon, self.oscillations) {
            (Some(eps), Some(osc)) => {
                let ve = ((eps - spec.beta1) / spec.beta1).max(0.0);
                let vo = (osc.saturating_sub(spec.beta2)) as f64 / spec.beta2.max(1) as f64;
                ve + vo
            }
            _ => f64::INFINITY,
        }
    }

    /// Incumbent ordering: feasibility first, then larger sampling time,
    /// error as the tie-break; infeasible points compare by violation.
    fn better_than(&self, other: &Evaluation, spec: &TuneSpec) -> bool {
        match (self.feasible, other.feasible) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => {
                if self.dt != other.dt {
                    self.dt > other.dt
                } else {
                    self.epsilon.unwrap_or(f64::INFINITY) < other.epsilon.unwrap_or(f64::INFINITY)
                }
            }
            (false, false) => self.violation(spec) < other.violation(spec),
        }
    }
}

/// Tuning outcome plus the full evaluation log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneResult {
    pub nu_star: f64,
    pub dt_star: f64,
    pub epsilon_star: Option<f64>,
    pub oscillations_star: Option<u64>,
    pub feasible: bool,
    pub evaluations: usize,
    pub eval_log: Vec<Evaluation>,
}

/// A closed-loop tuning problem on the compressor plant.
#[derive(Debug, Clone)]
pub struct PlantTuneProblem<'a> {
    pub params: &'a CompressorParams,
    pub sim: SimSpec,
    pub setpoint: Setpoint,
    /// Template for the controller; `nu` and `dt` are overwritten per point.
    pub controller: OfoConfig,
    pub metric: MetricConfig,
}

impl<'a> PlantTuneProblem<'a> {
    pub fn new(params: &'a CompressorParams, sim: SimSpec, setpoint: Setpoint) -> Self {
        let metric = MetricConfig {
            t_final: sim.t_final,
            ..MetricConfig::default()
        };
        Self {
            params,
            sim,
            setpoint,
            controller: OfoConfig::default(),
            metric,
        }
    }

    /// Run one closed loop and compute both metrics.
    pub fn evaluate(&self, nu: f64, dt: f64) -> Result<(f64, u64), SimError> {
        let mut cfg = self.controller.clone();
        cfg.nu = nu;
        cfg.dt = dt;
        let trace = run_closed_loop(&self.sim, &cfg, &self.setpoint, self.params)?;
        Ok((ise(&trace, &self.metric), oscillations(&trace, &self.metric)))
    }
}

/// Scaled search coordinates: gain linear on its box, sampling time
/// logarithmic (it spans four decades and the gain box touches zero).
#[derive(Debug, Clone, Copy)]
struct Scaling {
    nu_lo: f64,
    nu_span: f64,
    ln_dt_lo: f64,
    ln_dt_span: f64,
}

impl Scaling {
    fn new(spec: &TuneSpec) -> Self {
        Self {
            nu_lo: spec.nu_bounds.0,
            nu_span: spec.nu_bounds.1 - spec.nu_bounds.0,
            ln_dt_lo: spec.dt_bounds.0.ln(),
            ln_dt_span: spec.dt_bounds.1.ln() - spec.dt_bounds.0.ln(),
        }
    }

    fn to_box(&self, nu: f64, dt: f64) -> (f64, f64) {
        let x1 = if self.nu_span > 0.0 {
            (nu - self.nu_lo) / self.nu_span
        } else {
            0.0
        };
        let x2 = (dt.ln() - self.ln_dt_lo) / self.ln_dt_span;
        (x1, x2)
    }

    fn from_box(&self, x1: f64, x2: f64) -> (f64, f64) {
        let nu = self.nu_lo + x1.clamp(0.0, 1.0) * self.nu_span;
        let dt = (self.ln_dt_lo + x2.clamp(0.0, 1.0) * self.ln_dt_span).exp();
        (nu, dt)
    }
}

/// Tune against an arbitrary evaluation function (used by tests with
/// synthetic surrogates and by [`tune`] with the real plant).
///
/// Deterministic compass search over the scaled box: poll the four axis
/// directions, take the best strictly-improving candidate, halve the mesh
/// when no candidate improves, stop on budget exhaustion or mesh underflow.
/// Fault-free infeasible points are ranked by relative violation so the
/// search can walk out of an infeasible start; faulted points are discarded
/// outright.
pub fn tune_with<F>(spec: &TuneSpec, mut eval: F) -> TuneResult
where
    F: FnMut(f64, f64) -> Result<(f64, u64), SimError>,
{
    spec.validate().expect("invalid tuning spec");
    let scaling = Scaling::new(spec);
    let mut log: Vec<Evaluation> = Vec::new();
    let mut memo: HashMap<(u64, u64), Evaluation> = HashMap::new();
    let mut used = 0usize;

    let mut cached = |nu: f64, dt: f64,
                      used: &mut usize,
                      log: &mut Vec<Evaluation>|
     -> Option<Evaluation> {
        let key = (nu.to_bits(), dt.to_bits());
        if let Some(hit) = memo.get(&key) {
            return Some(hit.clone());
        }
        if *used >= spec.budget {
            return None;
        }
        *used += 1;
        let ev = Evaluation::from_outcome(nu, dt, &eval(nu, dt), spec);
        memo.insert(key, ev.clone());
        log.push(ev.clone());
        Some(ev)
    };

    let (nu0, dt0) = spec.initial;
    let mut incumbent = cached(nu0, dt0, &mut used, &mut log)
        .expect("budget >= 1 admits the initial evaluation");
    let (mut x1, mut x2) = scaling.to_box(nu0, dt0);
    let mut mesh = 0.25f64;

    while used < spec.budget && mesh >= 1.0e-3 {
        // objective direction (larger dt) polled first
        let candidates = [
            (x1, x2 + mesh),
            (x1, x2 - mesh),
            (x1 + mesh, x2),
            (x1 - mesh, x2),
        ];
        let mut best: Option<(Evaluation, (f64, f64))> = None;
        for (c1, c2) in candidates {
            let (nu, dt) = scaling.from_box(c1, c2);
            let Some(ev) = cached(nu, dt, &mut used, &mut log) else {
                break; // budget exhausted mid-poll
            };
            let improves_best = best
                .as_ref()
                .map_or(true, |(b, _)| ev.better_than(b, spec));
            if ev.better_than(&incumbent, spec) && improves_best {
                best = Some((ev, (c1.clamp(0.0, 1.0), c2.clamp(0.0, 1.0))));
            }
        }
        match best {
            Some((ev, (c1, c2))) => {
                incumbent = ev;
                (x1, x2) = (c1, c2);
                mesh = (mesh * 2.0).min(0.5);
            }
            None => {
                mesh *= 0.5;
            }
        }
    }

    // the reported optimum dominates everything seen, not just the poll path
    for ev in &log {
        if ev.better_than(&incumbent, spec) {
            incumbent = ev.clone();
        }
    }
    debug_assert!(
        !incumbent.feasible || log.iter().filter(|e| e.feasible).all(|e| e.dt <= incumbent.dt)
    );
    TuneResult {
        nu_star: incumbent.nu,
        dt_star: incumbent.dt,
        epsilon_star: incumbent.epsilon,
        oscillations_star: incumbent.oscillations,
        feasible: incumbent.feasible,
        evaluations: used,
        eval_log: log,
    }
}

/// Tune the compressor controller.
pub fn tune(spec: &TuneSpec, problem: &PlantTuneProblem<'_>) -> TuneResult {
    tune_with(spec, |nu, dt| problem.evaluate(nu, dt))
}

/// Evaluate the full Cartesian grid, rows ordered as the gain values and
/// columns as the sampling times. Cells run concurrently; the output order is
/// the input order regardless of scheduling. Faulted cells are recorded as
/// infeasible.
pub fn sweep(
    nu_values: &[f64],
    dt_values: &[f64],
    problem: &PlantTuneProblem<'_>,
) -> Vec<Evaluation> {
    let cells: Vec<(f64, f64)> = nu_values
        .iter()
        .flat_map(|&nu| dt_values.iter().map(move |&dt| (nu, dt)))
        .collect();
    // thresholds are not part of a sweep; mark cells feasible when they ran
    let pseudo = TuneSpec::new(f64::INFINITY, u64::MAX);
    cells
        .par_iter()
        .map(|&(nu, dt)| Evaluation::from_outcome(nu, dt, &problem.evaluate(nu, dt), &pseudo))
        .collect()
}

/// CSV for sweep grids: `nu,dt,epsilon,oscillations`; faulted cells carry
/// empty metric fields.
pub fn write_sweep_csv<W: Write>(grid: &[Evaluation], out: &mut W) -> io::Result<()> {
    writeln!(out, "nu,dt,epsilon,oscillations")?;
    for ev in grid {
        match (ev.epsilon, ev.oscillations) {
            (Some(e), Some(o)) => writeln!(out, "{:.11e},{:.11e},{:.11e},{}", ev.nu, ev.dt, e, o)?,
            _ => writeln!(out, "{:.11e},{:.11e},,", ev.nu, ev.dt)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::calibrated_default;

    /// Analytic surrogate: error falls with the gain-time product, the
    /// oscillation count grows stepwise with the gain.
    fn surrogate(nu: f64, dt: f64) -> Result<(f64, u64), SimError> {
        Ok((1.0 / (nu * dt).max(1.0e-12), (nu / 100.0).floor() as u64))
    }

    /// Surrogate with an interior optimum in dt.
    fn ridge_surrogate(nu: f64, dt: f64) -> Result<(f64, u64), SimError> {
        Ok((dt * dt / nu.max(1.0e-9), (nu / 100.0).floor() as u64))
    }

    fn grid_best(
        spec: &TuneSpec,
        f: impl Fn(f64, f64) -> Result<(f64, u64), SimError>,
    ) -> Option<(f64, f64)> {
        let scaling = Scaling::new(spec);
        let mut best: Option<(f64, f64)> = None;
        for i in 0..200 {
            for j in 0..200 {
                let (nu, dt) = scaling.from_box(i as f64 / 199.0, j as f64 / 199.0);
                let (eps, osc) = f(nu, dt).unwrap();
                if eps <= spec.beta1 && osc <= spec.beta2 {
                    if best.map_or(true, |(_, bdt)| dt > bdt) {
                        best = Some((nu, dt));
                    }
                }
            }
        }
        best
    }

    #[test]
    fn surrogate_tune_matches_exhaustive_grid() {
        let mut spec = TuneSpec::new(0.05, 3);
        spec.budget = 200;
        let result = tune_with(&spec, surrogate);
        let (_, grid_dt) = grid_best(&spec, surrogate).expect("grid has feasible points");
        assert!(result.feasible);
        // within one exhaustive-grid cell in the scaled coordinate
        let scaling = Scaling::new(&spec);
        let (_, x_tune) = scaling.to_box(result.nu_star, result.dt_star);
        let (_, x_grid) = scaling.to_box(result.nu_star, grid_dt);
        assert!(
            x_tune >= x_grid - 1.0 / 199.0,
            "tuned dt {} below grid optimum {}",
            result.dt_star,
            grid_dt
        );
    }

    #[test]
    fn interior_optimum_is_located() {
        let mut spec = TuneSpec::new(2.0, 10);
        spec.budget = 300;
        let result = tune_with(&spec, ridge_surrogate);
        let (_, grid_dt) = grid_best(&spec, ridge_surrogate).unwrap();
        assert!(result.feasible);
        let scaling = Scaling::new(&spec);
        let (_, x_tune) = scaling.to_box(result.nu_star, result.dt_star);
        let (_, x_grid) = scaling.to_box(result.nu_star, grid_dt);
        assert!(x_tune >= x_grid - 1.0 / 199.0);
    }

    #[test]
    fn impossible_threshold_reports_infeasible() {
        // the surrogate error cannot go below 1/(nu_hi * dt_hi) = 1e-5
        let spec = TuneSpec::new(1.0e-9, 50);
        let result = tune_with(&spec, surrogate);
        assert!(!result.feasible);
        assert!(result.eval_log.iter().all(|e| !e.feasible));
    }

    #[test]
    fn relaxing_thresholds_never_shrinks_the_sampling_time() {
        let mut base = TuneSpec::new(0.05, 2);
        base.budget = 200;
        let tight = tune_with(&base, surrogate);
        for (f1, f2) in [(1.5, 1), (4.0, 3), (100.0, 20)] {
            let mut relaxed = base.clone();
            relaxed.beta1 *= f1;
            relaxed.beta2 += f2;
            let loose = tune_with(&relaxed, surrogate);
            assert!(
                loose.dt_star >= tight.dt_star - 1.0e-12,
                "relaxation shrank dt: {} -> {}",
                tight.dt_star,
                loose.dt_star
            );
        }
    }

    #[test]
    fn log_points_stay_inside_bounds_and_budget() {
        let mut spec = TuneSpec::new(0.05, 3);
        spec.budget = 37;
        let result = tune_with(&spec, surrogate);
        assert!(result.evaluations <= 37);
        for ev in &result.eval_log {
            assert!((spec.nu_bounds.0..=spec.nu_bounds.1).contains(&ev.nu));
            assert!((spec.dt_bounds.0 * 0.999..=spec.dt_bounds.1 * 1.001).contains(&ev.dt));
        }
    }

    #[test]
    fn incumbent_dominates_all_feasible_log_entries() {
        let mut spec = TuneSpec::new(0.02, 5);
        spec.budget = 150;
        let result = tune_with(&spec, surrogate);
        if result.feasible {
            for ev in result.eval_log.iter().filter(|e| e.feasible) {
                assert!(ev.dt <= result.dt_star + 1.0e-12);
            }
        }
    }

    #[test]
    fn faulted_evaluations_are_extreme_barriered() {
        let mut spec = TuneSpec::new(1.0e9, 1_000_000);
        spec.budget = 60;
        // everything to the right of nu = 500 faults
        let result = tune_with(&spec, |nu, dt| {
            if nu > 500.0 {
                Err(SimError::Fault {
                    t: 0.0,
                    reason: "synthetic fault".into(),
                })
            } else {
                surrogate(nu, dt)
            }
        });
        assert!(result.feasible);
        assert!(result.nu_star <= 500.0);
        for ev in &result.eval_log {
            if ev.epsilon.is_none() {
                assert!(!ev.feasible, "faulted cell marked feasible");
            }
        }
    }

    #[test]
    fn repeated_points_are_memoized() {
        let mut calls = 0usize;
        let mut spec = TuneSpec::new(0.05, 3);
        spec.budget = 200;
        let result = tune_with(&spec, |nu, dt| {
            calls += 1;
            surrogate(nu, dt)
        });
        assert_eq!(calls, result.evaluations);
        assert_eq!(calls, result.eval_log.len());
        // clamping at box edges revisits points; the memo must absorb them
        assert!(calls <= 200);
    }

    #[test]
    fn frozen_gain_reproduces_the_error_baseline() {
        use crate::metrics::beta1_baseline;
        let cal = calibrated_default();
        let sim = SimSpec::at_calibrated_steady_state();
        let problem = PlantTuneProblem::new(&cal.params, sim, Setpoint::constant());
        let baseline = beta1_baseline(
            problem.sim.initial_state.ps,
            &problem.setpoint,
            &problem.metric,
        );
        for dt in [5.0, 50.0] {
            let (eps, _) = problem.evaluate(0.0, dt).unwrap();
            assert!(
                (eps - baseline).abs() <= 0.02 * baseline,
                "frozen-gain error {eps} strays from the baseline {baseline}"
            );
        }
        // the default starting point is near-frozen as well
        let (eps, osc) = problem.evaluate(0.1, 50.0).unwrap();
        assert!((140.0..=180.0).contains(&eps), "{eps}");
        assert_eq!(osc, 0);
    }

    #[test]
    fn single_cell_sweep_equals_evaluate() {
        let cal = calibrated_default();
        let mut sim = SimSpec::at_calibrated_steady_state();
        sim.t_final = 20.0;
        let problem = PlantTuneProblem::new(&cal.params, sim, Setpoint::constant());
        let grid = sweep(&[1.0], &[5.0], &problem);
        assert_eq!(grid.len(), 1);
        let (eps, osc) = problem.evaluate(1.0, 5.0).unwrap();
        assert_eq!(grid[0].epsilon, Some(eps));
        assert_eq!(grid[0].oscillations, Some(osc));
    }

    #[test]
    fn sweep_preserves_order_and_determinism() {
        let cal = calibrated_default();
        let mut sim = SimSpec::at_calibrated_steady_state();
        sim.t_final = 10.0;
        let problem = PlantTuneProblem::new(&cal.params, sim, Setpoint::constant());
        let nus = [0.1, 10.0];
        let dts = [0.5, 2.0, 5.0];
        let a = sweep(&nus, &dts, &problem);
        let b = sweep(&nus, &dts, &problem);
        assert_eq!(a.len(), 6);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x, y);
        }
        // row-major ordering
        assert_eq!(a[0].nu, 0.1);
        assert_eq!(a[0].dt, 0.5);
        assert_eq!(a[3].nu, 10.0);
        assert_eq!(a[3].dt, 0.5);
        let mut csv = Vec::new();
        write_sweep_csv(&a, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("nu,dt,epsilon,oscillations\n"));
    }
}
