//! Linearization of the plant and settling-time analysis of the linearized
//! step response.

use super::{derivatives, equilibrium, CompressorParams, PlantState};
use crate::error::PlantError;
use crate::integrate::{integrate_segment, OdeOptions};
use nalgebra::{DMatrix, DVector, Matrix4, SVector, Vector4};

/// First-order model `dx/dt = A (x - x0) + B (tau - tau0)` around an
/// operating point.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub a_jac: Matrix4<f64>,
    pub b_jac: Vector4<f64>,
    pub operating_state: PlantState,
    pub operating_input: f64,
}

/// Central finite-difference Jacobians with a relative step of 1e-6 of each
/// variable's scale.
pub fn linearize(
    state: &PlantState,
    tau: f64,
    params: &CompressorParams,
) -> Result<Linearization, PlantError> {
    let x0 = state.as_vector();
    let mut a = Matrix4::zeros();
    for col in 0..4 {
        let h = 1.0e-6 * x0[col].abs().max(1.0);
        let mut xp = x0;
        let mut xm = x0;
        xp[col] += h;
        xm[col] -= h;
        let fp = derivatives(&PlantState::from_vector(&xp), tau, params)?;
        let fm = derivatives(&PlantState::from_vector(&xm), tau, params)?;
        let d = (fp - fm) / (2.0 * h);
        for row in 0..4 {
            if !d[row].is_finite() {
                return Err(PlantError::NumericalFault {
                    context: "jacobian",
                    value: d[row],
                });
            }
            a[(row, col)] = d[row];
        }
    }
    let ht = 1.0e-6 * tau.abs().max(1.0);
    let fp = derivatives(state, tau + ht, params)?;
    let fm = derivatives(state, tau - ht, params)?;
    let b = (fp - fm) / (2.0 * ht);
    Ok(Linearization {
        a_jac: a,
        b_jac: b,
        operating_state: *state,
        operating_input: tau,
    })
}

impl Linearization {
    /// Real parts of the state-matrix eigenvalues, descending.
    pub fn eigenvalue_real_parts(&self) -> Vec<f64> {
        let dyn_a = DMatrix::from_fn(4, 4, |r, c| self.a_jac[(r, c)]);
        let mut re: Vec<f64> = dyn_a.complex_eigenvalues().iter().map(|z| z.re).collect();
        re.sort_by(|a, b| b.partial_cmp(a).unwrap());
        re
    }
}

/// Settling time of the suction-pressure response of the plant linearized at
/// the steady state sustained by `tau_op`: the last time the unit-torque-step
/// response leaves the +/-5% band around its final value.
pub fn settling_time(params: &CompressorParams, tau_op: f64) -> Result<f64, PlantError> {
    let op = equilibrium(tau_op, params)?;
    let lin = linearize(&op, tau_op, params)?;
    let a = DMatrix::from_fn(4, 4, |r, c| lin.a_jac[(r, c)]);
    let b = DVector::from_fn(4, |r, _| lin.b_jac[r]);
    linear_step_settling(&a, &b, 0, 0.05)
}

/// Settling time of output `x[output_row]` of the linear system
/// `dx/dt = A x + B` (unit step applied at t = 0 from rest): the last time
/// the response is outside `band` (relative) of its final value.
///
/// Fails with [`PlantError::Instability`] when `A` is not Hurwitz.
pub fn linear_step_settling(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    output_row: usize,
    band: f64,
) -> Result<f64, PlantError> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(b.len(), n);
    let eig = a.clone().complex_eigenvalues();
    let max_re = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if max_re >= -1.0e-12 {
        return Err(PlantError::Instability { max_re });
    }
    // final value x_inf = -A^-1 B
    let x_inf = a
        .clone()
        .lu()
        .solve(&(-b.clone()))
        .ok_or(PlantError::Instability { max_re })?;
    let y_inf = x_inf[output_row];
    if y_inf == 0.0 {
        return Ok(0.0);
    }
    let tol = band * y_inf.abs();

    // Horizon: long enough for the slowest mode to decay well inside the band.
    let horizon = 12.0 / max_re.abs();

    // Dense-sample the response and track the last band exit.
    let n_grid = 8000usize;
    let dt = horizon / n_grid as f64;
    let mut last_outside: f64 = 0.0;
    let mut prev_dev = (0.0 - y_inf).abs(); // response starts at the origin
    let mut prev_t = 0.0f64;

    // The integrator is generic over fixed dimension; the plant is 4-state and
    // the synthetic oracle is 1-state, so dispatch on those two sizes.
    match n {
        1 => {
            let a00 = a[(0, 0)];
            let b0 = b[0];
            sample_linear::<1>(
                |x| SVector::<f64, 1>::new(a00 * x[0] + b0),
                horizon,
                dt,
                |t, x| {
                    let dev = (x[0] - y_inf).abs();
                    track_exit(t, dev, tol, &mut last_outside, &mut prev_t, &mut prev_dev);
                },
            );
        }
        4 => {
            let am = Matrix4::from_fn(|r, c| a[(r, c)]);
            let bv = Vector4::from_fn(|r, _| b[r]);
            sample_linear::<4>(
                |x| am * x + bv,
                horizon,
                dt,
                |t, x| {
                    let dev = (x[output_row] - y_inf).abs();
                    track_exit(t, dev, tol, &mut last_outside, &mut prev_t, &mut prev_dev);
                },
            );
        }
        other => panic!("linear_step_settling supports 1- or 4-state systems, got {other}"),
    }
    Ok(last_outside)
}

/// Locate the band-exit boundary by linear interpolation between samples.
fn track_exit(t: f64, dev: f64, tol: f64, last: &mut f64, prev_t: &mut f64, prev_dev: &mut f64) {
    if dev > tol {
        *last = t;
    } else if *prev_dev > tol {
        // crossed into the band between samples
        let frac = (*prev_dev - tol) / (*prev_dev - dev);
        *last = *prev_t + frac * (t - *prev_t);
    }
    *prev_t = t;
    *prev_dev = dev;
}

fn sample_linear<const N: usize>(
    f: impl Fn(&SVector<f64, N>) -> SVector<f64, N>,
    horizon: f64,
    dt: f64,
    mut on_sample: impl FnMut(f64, &SVector<f64, N>),
) {
    let opts = OdeOptions::new(1.0e-9, SVector::<f64, N>::repeat(1.0e-12));
    let mut next = dt;
    let x0 = SVector::<f64, N>::zeros();
    integrate_segment(
        |_t, x| f(x),
        0.0,
        horizon,
        x0,
        &opts,
        |dense, _end| {
            while next <= dense.t + dense.h + 1.0e-15 && next <= horizon {
                let v = dense.eval(next);
                on_sample(next, &v);
                next += dt;
            }
            Ok(())
        },
    )
    .expect("linear system integration cannot fail on a Hurwitz matrix");
}
