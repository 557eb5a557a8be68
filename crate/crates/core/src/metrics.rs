//! Performance functionals over recorded traces: integrated squared tracking
//! error, oscillation count, and the frozen-plant error baseline used to seed
//! the tuning thresholds.

use crate::simloop::{Setpoint, Trace};
use serde::{Deserialize, Serialize};

/// Scaling and tolerance knobs of the trace metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Error scale applied to the squared-residual integral.
    pub gamma1: f64,
    /// Crossing hysteresis half-width, Pa. A crossing registers only after
    /// the residual has been beyond the band on both sides.
    pub deadband: f64,
    /// Evaluation horizon, s; traces extending further are truncated.
    pub t_final: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            gamma1: 1.0e-8,
            deadband: 10.0,
            t_final: 200.0,
        }
    }
}

/// Flat metric record emitted as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub epsilon: f64,
    pub oscillations: u64,
    pub beta1_baseline: f64,
}

/// Integrated squared error `gamma1 * int (ps - ysp)^2 dt` by the trapezoid
/// rule on the trace grid, residual in Pa.
pub fn ise(trace: &Trace, cfg: &MetricConfig) -> f64 {
    let mut acc = 0.0;
    for i in 1..trace.len() {
        if trace.t[i] > cfg.t_final + 1.0e-9 {
            break;
        }
        let r0 = trace.ps[i - 1] - trace.ysp[i - 1];
        let r1 = trace.ps[i] - trace.ysp[i];
        acc += 0.5 * (r0 * r0 + r1 * r1) * (trace.t[i] - trace.t[i - 1]);
    }
    cfg.gamma1 * acc
}

/// Number of setpoint crossings of the residual `ps - ysp`.
///
/// A sign flip across the hysteresis band counts once. Samples that are
/// numerically zero (relative to the residual scale) are setpoint touches:
/// an excursion into the band that contains one counts as a crossing even if
/// the residual returns to the same side or the trace ends there.
pub fn oscillations(trace: &Trace, cfg: &MetricConfig) -> u64 {
    let n = trace.len();
    let mut res = Vec::with_capacity(n);
    let mut scale: f64 = 0.0;
    for i in 0..n {
        if trace.t[i] > cfg.t_final + 1.0e-9 {
            break;
        }
        let r = trace.ps[i] - trace.ysp[i];
        scale = scale.max(r.abs());
        res.push(r);
    }
    let zero_eps = 1.0e-12 * scale;
    let band = cfg.deadband.max(zero_eps);
    let mut count = 0u64;
    let mut last_sign = 0i8; // most recent definite side
    let mut pending_touch = false; // inside the band after a definite side,
                                   // with a numerically-zero sample seen
    for (i, &r) in res.iter().enumerate() {
        let sign = if r > band {
            1
        } else if r < -band {
            -1
        } else {
            0
        };
        if sign == 0 {
            if last_sign != 0 && r.abs() <= zero_eps && i > 0 {
                pending_touch = true;
            }
            continue;
        }
        if last_sign != 0 && sign != last_sign {
            count += 1; // crossed through the band
            pending_touch = false;
        } else if pending_touch && sign == last_sign {
            count += 1; // touched the setpoint and came back
            pending_touch = false;
        }
        last_sign = sign;
    }
    if pending_touch {
        count += 1; // trace ends on the setpoint
    }
    count
}

/// Frozen-plant error baseline: the tracking error a plant pinned at `ps0`
/// would accumulate against the setpoint, integrated on a dense grid.
pub fn beta1_baseline(ps0_pa: f64, setpoint: &Setpoint, cfg: &MetricConfig) -> f64 {
    let dt = 0.01;
    let n = (cfg.t_final / dt).round() as usize;
    let mut acc = 0.0;
    let mut prev = {
        let r = ps0_pa - setpoint.value(0.0);
        r * r
    };
    for i in 1..=n {
        let t = i as f64 * dt;
        let r = ps0_pa - setpoint.value(t);
        let sq = r * r;
        acc += 0.5 * (prev + sq) * dt;
        prev = sq;
    }
    cfg.gamma1 * acc
}
