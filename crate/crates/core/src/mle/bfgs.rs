//! Dense BFGS maximizer with Armijo backtracking.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Converged once `|grad|_inf < grad_tol * max(1, min(|f|, scale))`.
    pub grad_tol: f64,
    /// Cap on the value scale used by the stopping rule.
    pub scale: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 500, grad_tol: 1e-6, scale: f64::INFINITY, max_backtracks: 60 }
    }
}

#[derive(Clone, Debug)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub reason: String,
    pub trace: Vec<f64>,
}

/// Maximizes `f`, which returns the value and gradient at a point or `None`
/// when the point is infeasible (treated as a failed trial step).
pub fn maximize<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> Result<BfgsResult>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let d = x0.len();
    let (mut fx, g0) = f(x0).ok_or_else(|| Error::Precondition("BFGS start point is infeasible".into()))?;
    if !fx.is_finite() {
        return Err(Error::Precondition("BFGS start value is not finite".into()));
    }
    let mut x = DVector::from_column_slice(x0);
    let mut g = DVector::from_vec(g0);
    let mut h = DMatrix::<f64>::identity(d, d);
    let mut fresh = true;
    let mut trace = vec![fx];
    let done = |g: &DVector<f64>, fx: f64| g.amax() < opts.grad_tol * fx.abs().min(opts.scale).max(1.0);
    for it in 0..opts.max_iter {
        if done(&g, fx) {
            return Ok(finish(x, fx, g, it, true, "gradient tolerance reached", trace));
        }
        let mut p = &h * &g;
        let mut slope = g.dot(&p);
        if !(slope > 0.0) {
            h = DMatrix::identity(d, d);
            fresh = true;
            p = g.clone();
            slope = g.dot(&p);
        }
        let mut t = if fresh { (1.0 / p.amax()).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let trial = &x + &p * t;
            if let Some((ft, gt)) = f(trial.as_slice()) {
                if ft.is_finite() && ft >= fx + 1e-4 * t * slope {
                    accepted = Some((trial, ft, DVector::from_vec(gt)));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            if !fresh {
                h = DMatrix::identity(d, d);
                fresh = true;
                continue;
            }
            return Ok(finish(x, fx, g, it, false, "line search failure", trace));
        };
        let s = &xn - &x;
        let y = &g - &gn;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
            fresh = false;
        }
        x = xn;
        fx = fnew;
        g = gn;
        trace.push(fx);
    }
    let ok = done(&g, fx);
    Ok(finish(x, fx, g, opts.max_iter, ok, if ok { "gradient tolerance reached" } else { "iteration limit" }, trace))
}

fn finish(
    x: DVector<f64>,
    value: f64,
    g: DVector<f64>,
    iterations: usize,
    converged: bool,
    reason: &str,
    trace: Vec<f64>,
) -> BfgsResult {
    BfgsResult {
        x: x.as_slice().to_vec(),
        value,
        gradient: g.as_slice().to_vec(),
        iterations,
        converged,
        reason: reason.into(),
        trace,
    }
}
