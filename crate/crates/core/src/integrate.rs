//! Embedded Dormand-Prince 5(4) integrator with PI step-size control and
//! fourth-order dense output.
//!
//! The closed-loop executor restarts integration at every controller event so
//! the zero-order hold stays exact; the integrator therefore exposes a
//! segment-oriented API: integrate from `t0` to `t1`, invoking a callback with
//! a dense interpolant after every accepted step.

use nalgebra::SVector;

/// Butcher tableau of the Dormand-Prince 5(4) pair.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order solution weights (row seven of `A`; the pair is FSAL).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
/// Fourth-order embedded weights.
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];
/// Dense-output weights for the quartic interpolant.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const ALPHA: f64 = 0.2 - 0.75 * BETA;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

/// Integration tolerances and guards.
#[derive(Debug, Clone)]
pub struct OdeOptions<const N: usize> {
    pub rtol: f64,
    pub atol: SVector<f64, N>,
    /// Step carried over from a previous segment, if any.
    pub h_init: Option<f64>,
    pub max_steps: usize,
}

impl<const N: usize> OdeOptions<N> {
    pub fn new(rtol: f64, atol: SVector<f64, N>) -> Self {
        Self {
            rtol,
            atol,
            h_init: None,
            max_steps: 50_000_000,
        }
    }
}

/// Why a segment could not be completed.
#[derive(Debug, Clone)]
pub enum IntegrateError {
    StepSizeUnderflow { t: f64 },
    MaxStepsExceeded { t: f64 },
    NonFiniteState { t: f64 },
    /// The per-step callback rejected the state (invariant violation).
    Rejected { t: f64, reason: String },
}

impl std::fmt::Display for IntegrateError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::StepSizeUnderflow { t } => write!(f, "step size underflow at t = {t:.6e}"),
            Self::MaxStepsExceeded { t } => write!(f, "step budget exhausted at t = {t:.6e}"),
            Self::NonFiniteState { t } => write!(f, "non-finite state at t = {t:.6e}"),
            Self::Rejected { t, reason } => write!(f, "state rejected at t = {t:.6e}: {reason}"),
        }
    }
}

/// Dense interpolant over one accepted step `[t, t + h]`.
pub struct DenseStep<'a, const N: usize> {
    pub t: f64,
    pub h: f64,
    rcont: &'a [SVector<f64, N>; 5],
}

impl<const N: usize> DenseStep<'_, N> {
    /// Evaluate the interpolant at `t_eval` inside the step span.
    pub fn eval(&self, t_eval: f64) -> SVector<f64, N> {
        let theta = ((t_eval - self.t) / self.h).clamp(0.0, 1.0);
        let th1 = 1.0 - theta;
        self.rcont[0]
            + (self.rcont[1] + (self.rcont[2] + (self.rcont[3] + self.rcont[4] * th1) * theta) * th1)
                * theta
    }
}

/// Result of a completed segment.
pub struct SegmentEnd<const N: usize> {
    pub state: SVector<f64, N>,
    /// Last accepted step size, suitable as `h_init` for the next segment.
    pub h_last: f64,
    pub steps: usize,
}

/// Integrate `dx/dt = f(t, x)` from `t0` to `t1`, calling `on_step` with a
/// dense interpolant after each accepted step. `on_step` may return an error
/// string to abort (used for state-invariant checks).
pub fn integrate_segment<const N: usize>(
    mut f: impl FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
    t0: f64,
    t1: f64,
    x0: SVector<f64, N>,
    opts: &OdeOptions<N>,
    mut on_step: impl FnMut(&DenseStep<'_, N>, &SVector<f64, N>) -> Result<(), String>,
) -> Result<SegmentEnd<N>, IntegrateError> {
    let span = t1 - t0;
    debug_assert!(span > 0.0);
    let mut t = t0;
    let mut x = x0;
    let mut k1 = f(t, &x);
    let mut h = opts
        .h_init
        .unwrap_or_else(|| initial_step(&x, &k1, opts))
        .min(span);
    let mut err_old: f64 = 1.0e-4;
    let mut steps = 0usize;
    let mut k = [SVector::<f64, N>::zeros(); 7];

    loop {
        if steps >= opts.max_steps {
            return Err(IntegrateError::MaxStepsExceeded { t });
        }
        let h_min = 1.0e-14 * t.abs().max(1.0);
        if h < h_min {
            return Err(IntegrateError::StepSizeUnderflow { t });
        }
        let last = t + h >= t1 - 1.0e-14 * t1.abs().max(1.0);
        if last {
            h = t1 - t;
        }

        k[0] = k1;
        for s in 1..7 {
            let mut xs = x;
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s][j];
                if a != 0.0 {
                    xs += kj * (a * h);
                }
            }
            k[s] = f(t + C[s] * h, &xs);
        }
        let mut x_new = x;
        let mut err_vec = SVector::<f64, N>::zeros();
        for (s, ks) in k.iter().enumerate() {
            if B5[s] != 0.0 {
                x_new += ks * (B5[s] * h);
            }
            let db = B5[s] - B4[s];
            if db != 0.0 {
                err_vec += ks * (db * h);
            }
        }

        // weighted RMS error norm
        let mut err: f64 = 0.0;
        for i in 0..N {
            let sc = opts.atol[i] + opts.rtol * x[i].abs().max(x_new[i].abs());
            let e = err_vec[i] / sc;
            err += e * e;
        }
        err = (err / N as f64).sqrt();
        if !err.is_finite() {
            // treat as a hard rejection; shrink and retry
            h *= 0.1;
            steps += 1;
            continue;
        }

        if err <= 1.0 {
            // accepted; stage 7 is f(t+h, x_new) and is reused as the next k1
            steps += 1;
            let k_end = k[6];
            let ydiff = x_new - x;
            let bspl = k[0] * h - ydiff;
            let mut cont4 = SVector::<f64, N>::zeros();
            for (s, ks) in k.iter().enumerate() {
                if D[s] != 0.0 {
                    cont4 += ks * D[s];
                }
            }
            let rcont = [x, ydiff, bspl, ydiff - k_end * h - bspl, cont4 * h];
            if !x_new.iter().all(|v| v.is_finite()) {
                return Err(IntegrateError::NonFiniteState { t: t + h });
            }
            on_step(&DenseStep { t, h, rcont: &rcont }, &x_new).map_err(|reason| {
                IntegrateError::Rejected { t: t + h, reason }
            })?;

            t += h;
            x = x_new;
            k1 = k_end;
            if last || t >= t1 {
                return Ok(SegmentEnd {
                    state: x,
                    h_last: h,
                    steps,
                });
            }
            let err_cl = err.max(1.0e-10);
            let fac = SAFETY * err_cl.powf(-ALPHA) * err_old.powf(BETA);
            h *= fac.clamp(FAC_MIN, FAC_MAX);
            err_old = err_cl;
        } else {
            steps += 1;
            let fac = (SAFETY * err.powf(-ALPHA)).clamp(FAC_MIN, 1.0);
            h *= fac;
        }
    }
}

/// Conservative first-step heuristic from the state/derivative scales.
fn initial_step<const N: usize>(
    x: &SVector<f64, N>,
    dx: &SVector<f64, N>,
    opts: &OdeOptions<N>,
) -> f64 {
    let mut d0: f64 = 0.0;
    let mut d1: f64 = 0.0;
    for i in 0..N {
        let sc = opts.atol[i] + opts.rtol * x[i].abs();
        d0 += (x[i] / sc).powi(2);
        d1 += (dx[i] / sc).powi(2);
    }
    let d0 = (d0 / N as f64).sqrt();
    let d1 = (d1 / N as f64).sqrt();
    if d0 < 1.0e-5 || d1 < 1.0e-5 {
        1.0e-6
    } else {
        0.01 * d0 / d1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{SVector, Vector1, Vector2};

    fn opts1(rtol: f64, atol: f64) -> OdeOptions<1> {
        OdeOptions::new(rtol, Vector1::new(atol))
    }

    #[test]
    fn exponential_decay_matches_analytic() {
        let f = |_t: f64, x: &Vector1<f64>| -x;
        let end = integrate_segment(f, 0.0, 5.0, Vector1::new(1.0), &opts1(1e-8, 1e-10), |_, _| {
            Ok(())
        })
        .unwrap();
        assert_relative_eq!(end.state[0], (-5.0f64).exp(), max_relative = 1e-7);
    }

    #[test]
    fn tightening_tolerance_reduces_error() {
        let f = |t: f64, _x: &Vector1<f64>| Vector1::new((2.0 * t).cos());
        let exact = (10.0f64).sin() / 2.0;
        let coarse = integrate_segment(f, 0.0, 5.0, Vector1::new(0.0), &opts1(1e-4, 1e-6), |_, _| {
            Ok(())
        })
        .unwrap();
        let fine = integrate_segment(f, 0.0, 5.0, Vector1::new(0.0), &opts1(1e-9, 1e-11), |_, _| {
            Ok(())
        })
        .unwrap();
        assert!((fine.state[0] - exact).abs() <= (coarse.state[0] - exact).abs());
        assert_relative_eq!(fine.state[0], exact, max_relative = 1e-8);
    }

    #[test]
    fn dense_output_tracks_solution_inside_steps() {
        // Harmonic oscillator; compare the interpolant against sin/cos.
        let f = |_t: f64, x: &Vector2<f64>| Vector2::new(x[1], -x[0]);
        let mut worst: f64 = 0.0;
        integrate_segment(
            f,
            0.0,
            10.0,
            Vector2::new(0.0, 1.0),
            &OdeOptions::new(1e-9, SVector::repeat(1e-11)),
            |dense, _| {
                for q in [0.25, 0.5, 0.75] {
                    let te = dense.t + q * dense.h;
                    let v = dense.eval(te);
                    worst = worst.max((v[0] - te.sin()).abs());
                }
                Ok(())
            },
        )
        .unwrap();
        assert!(worst < 1e-7, "dense interpolant error {worst}");
    }

    #[test]
    fn stiff_linear_system_stays_stable() {
        // One fast mode (-400) and one slow (-0.05); the controller must hold
        // the step at the stability boundary without blowing up.
        let f = |_t: f64, x: &Vector2<f64>| Vector2::new(-400.0 * x[0], -0.05 * x[1]);
        let end = integrate_segment(
            f,
            0.0,
            50.0,
            Vector2::new(1.0, 1.0),
            &OdeOptions::new(1e-6, SVector::repeat(1e-9)),
            |_, _| Ok(()),
        )
        .unwrap();
        assert_relative_eq!(end.state[1], (-0.05f64 * 50.0).exp(), max_relative = 1e-5);
        // the fast component has fully decayed to tolerance-level noise
        assert!(end.state[0].abs() < 1e-6);
    }

    #[test]
    fn identical_inputs_give_bit_identical_results() {
        let f = |_t: f64, x: &Vector2<f64>| Vector2::new(x[1], -1.3 * x[0] - 0.1 * x[1]);
        let run = || {
            integrate_segment(
                f,
                0.0,
                20.0,
                Vector2::new(1.0, 0.0),
                &OdeOptions::new(1e-7, SVector::repeat(1e-9)),
                |_, _| Ok(()),
            )
            .unwrap()
            .state
        };
        let a = run();
        let b = run();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }
}
