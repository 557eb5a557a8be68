//! Dense convex quadratic programming by a dual active-set iteration.
//!
//! Solves `min 1/2 w' G w + c' w` subject to `E w <= f` with `G` symmetric
//! positive-definite. The iteration starts from the unconstrained minimizer
//! and adds violated constraints one at a time, taking partial dual steps
//! when an active multiplier would turn negative; it never needs a feasible
//! starting point and detects inconsistent constraint sets. Problem sizes in
//! this crate are tiny, so every working-set change re-solves the reduced
//! system from a fresh Cholesky factor of `G` instead of updating
//! factorizations.

use crate::error::QpError;
use nalgebra::{Cholesky, DMatrix, DVector};

/// Solution of a QP: minimizer, active constraints, multipliers.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub w: DVector<f64>,
    pub active: Vec<usize>,
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

const MAX_ITERATIONS: usize = 500;

/// Minimize `1/2 w' G w + c' w` subject to `E w <= f`.
pub fn solve(
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    e: &DMatrix<f64>,
    f: &DVector<f64>,
) -> Result<QpSolution, QpError> {
    let n = g.nrows();
    if g.ncols() != n || c.len() != n {
        return Err(QpError::BadProblem(format!(
            "G must be {n}x{n} and c length {n}"
        )));
    }
    let q = e.nrows();
    if q > 0 && e.ncols() != n {
        return Err(QpError::BadProblem(format!(
            "E must have {n} columns, got {}",
            e.ncols()
        )));
    }
    if f.len() != q {
        return Err(QpError::BadProblem(format!(
            "f must have length {q}, got {}",
            f.len()
        )));
    }
    let chol = Cholesky::new(g.clone())
        .ok_or_else(|| QpError::BadProblem("G is not positive-definite".into()))?;

    // unconstrained minimizer
    let mut w = chol.solve(&(-c));
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();

    let scale = 1.0 + f.amax().max(w.amax());
    let tol = 1.0e-10 * scale;

    let mut iterations = 0usize;
    loop {
        // most violated inactive constraint
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..q {
            if active.contains(&i) {
                continue;
            }
            let v = e.row(i).dot(&w.transpose()) - f[i];
            if v > tol && worst.map_or(true, |(_, wv)| v > wv) {
                worst = Some((i, v));
            }
        }
        let Some((p, mut violation)) = worst else {
            return Ok(QpSolution {
                w,
                active,
                multipliers: lambda,
                iterations,
            });
        };
        let ep = e.row(p).transpose();
        let mut lambda_p = 0.0f64;

        // inner loop: drive the violation of p to zero
        loop {
            iterations += 1;
            if iterations > MAX_ITERATIONS {
                return Err(QpError::Stalled { iterations });
            }
            // direction of (w, lambda_active) as lambda_p grows at unit rate
            let k = active.len();
            let (z, lam_dot) = if k == 0 {
                (-chol.solve(&ep), DVector::zeros(0))
            } else {
                let mut ew = DMatrix::zeros(k, n);
                for (row, &idx) in active.iter().enumerate() {
                    ew.row_mut(row).copy_from(&e.row(idx));
                }
                let y = chol.solve(&ew.transpose()); // G^-1 E_W'
                let m = &ew * &y; // E_W G^-1 E_W'
                let rhs = &ew * chol.solve(&ep);
                let lam_dot = m
                    .lu()
                    .solve(&(-rhs))
                    .ok_or(QpError::Stalled { iterations })?;
                let z = -chol.solve(&ep) - &y * &lam_dot;
                (z, lam_dot)
            };
            let dv = ep.dot(&z); // rate of violation change, <= 0
            let degenerate = dv >= -1.0e-12 * scale;

            // dual blocking step: active multipliers must stay non-negative
            let mut t1 = f64::INFINITY;
            let mut blocker: Option<usize> = None;
            for (j, &ld) in lam_dot.iter().enumerate() {
                if ld < -1.0e-14 {
                    let t = lambda[j] / (-ld);
                    if t < t1 {
                        t1 = t;
                        blocker = Some(j);
                    }
                }
            }
            let t2 = if degenerate {
                f64::INFINITY
            } else {
                violation / (-dv)
            };
            if t1.is_infinite() && t2.is_infinite() {
                return Err(QpError::Infeasible {
                    constraint: p,
                    violation,
                });
            }
            let t = t1.min(t2);
            if !degenerate {
                w += &z * t;
            }
            for (j, &ld) in lam_dot.iter().enumerate() {
                lambda[j] += t * ld;
            }
            lambda_p += t;
            violation += t * dv;

            if t2 <= t1 {
                // p satisfied exactly; adopt it into the working set
                active.push(p);
                lambda.push(lambda_p);
                break;
            }
            // partial step: the blocking constraint leaves the working set
            let j = blocker.expect("finite t1 implies a blocking index");
            active.remove(j);
            lambda.remove(j);
        }
    }
}

/// Largest KKT residual of a candidate solution (stationarity,
/// complementarity, feasibility); used by tests.
pub fn kkt_residual(
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    e: &DMatrix<f64>,
    f: &DVector<f64>,
    sol: &QpSolution,
) -> f64 {
    let mut grad = g * &sol.w + c;
    for (idx, &ci) in sol.active.iter().enumerate() {
        grad += e.row(ci).transpose() * sol.multipliers[idx];
    }
    let mut worst = grad.amax();
    for i in 0..e.nrows() {
        let v = e.row(i).dot(&sol.w.transpose()) - f[i];
        worst = worst.max(v); // feasibility
    }
    for (idx, &ci) in sol.active.iter().enumerate() {
        worst = worst.max(-sol.multipliers[idx]); // dual feasibility
        let v = e.row(ci).dot(&sol.w.transpose()) - f[ci];
        worst = worst.max(sol.multipliers[idx].abs().min(v.abs())); // complementarity
    }
    worst
}
