//! EM with a conditional-maximization M-step (ECM).

use rayon::prelude::*;

use super::{finish_fit, prepare_init, usable_stats, FitResult, Tolerances};
use crate::error::{Error, Result};
use crate::likelihood::{component_derivs, log_f_unchecked, responsibilities_into};
use crate::model::{project_weights, MixtureParams, ParamBox};
use crate::stats::pairwise_sum;
use crate::suffstats::SuffStats;

/// E-step: fills `resp` (row-major, `n x M`) and returns the log-likelihood.
fn e_step(stats: &[SuffStats], theta: &MixtureParams, resp: &mut [f64]) -> f64 {
    let m = theta.components();
    let terms: Vec<f64> =
        resp.par_chunks_mut(m).zip(stats.par_iter()).map(|(r, s)| responsibilities_into(s.u, s.v, theta, r)).collect();
    pairwise_sum(&terms)
}

fn m_step(
    stats: &[SuffStats],
    resp: &[f64],
    theta: &MixtureParams,
    bx: &ParamBox,
    newton_steps: usize,
) -> MixtureParams {
    let m = theta.components();
    let counts: Vec<f64> = (0..m).map(|k| stats.iter().enumerate().map(|(i, _)| resp[i * m + k]).sum()).collect();
    let weights = project_weights(&counts, bx.a_min);
    let mut mu = theta.mu.clone();
    let mut omega2 = theta.omega2.clone();
    for k in 0..m {
        let w = omega2[k];
        let (mut num, mut den) = (0.0, 0.0);
        for (i, s) in stats.iter().enumerate() {
            let r = resp[i * m + k] / (1.0 + w * s.v);
            num += r * s.u;
            den += r * s.v;
        }
        if den > 0.0 {
            mu[k] = (num / den).clamp(bx.mu[0], bx.mu[1]);
        }
        omega2[k] = update_omega2(stats, resp, m, k, mu[k], w, bx, newton_steps);
    }
    MixtureParams::new(weights, mu, omega2)
}

/// Safeguarded Newton ascent on `Q_k(w) = sum_i r_ik log f(U_i, V_i, mu, w)`
/// in `log w`, with backtracking halving and box clamping.
#[allow(clippy::too_many_arguments)]
fn update_omega2(
    stats: &[SuffStats],
    resp: &[f64],
    m: usize,
    k: usize,
    mu: f64,
    w0: f64,
    bx: &ParamBox,
    steps: usize,
) -> f64 {
    let q = |w: f64| -> f64 {
        stats.iter().enumerate().map(|(i, s)| resp[i * m + k] * log_f_unchecked(s.u, s.v, mu, w)).sum()
    };
    let mut w = w0;
    for _ in 0..steps {
        let (mut q0, mut g, mut h) = (0.0, 0.0, 0.0);
        for (i, s) in stats.iter().enumerate() {
            let r = resp[i * m + k];
            let cd = component_derivs(s.u, s.v, mu, w);
            q0 += r * cd.log_f;
            g += r * cd.d_w;
            h += r * cd.d_w_w;
        }
        let gl = w * g;
        let hl = w * g + w * w * h;
        if gl == 0.0 {
            break;
        }
        let mut step = if hl < 0.0 { -gl / hl } else { gl.signum() };
        step = step.clamp(-2.0, 2.0);
        let mut moved = false;
        for _ in 0..40 {
            let wn = (w * step.exp()).clamp(bx.omega2[0], bx.omega2[1]);
            if wn == w {
                break;
            }
            if q(wn) >= q0 {
                w = wn;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    w
}

/// Fits an `m`-component mixture by ECM from `init` (projected into the box).
/// Every sweep must not lower the log-likelihood by more than `1e-8 n`; a
/// larger drop is reported as an internal error.
pub fn em_fit(
    stats: &[SuffStats],
    m: usize,
    bx: &ParamBox,
    init: &MixtureParams,
    tol: &Tolerances,
) -> Result<FitResult> {
    let (stats, excluded) = usable_stats(stats, m)?;
    let mut theta = prepare_init(init, m, bx)?;
    let n = stats.len() as f64;
    let tol_f = tol.tol_f_per_subject * n;
    let slack = 1e-8 * n;
    let mut resp = vec![0.0; stats.len() * m];
    let mut ll = e_step(&stats, &theta, &mut resp);
    if !ll.is_finite() {
        return Err(Error::Estimation(format!("log-likelihood at the start point is {ll}")));
    }
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=tol.max_iter {
        iterations = it;
        let next = m_step(&stats, &resp, &theta, bx, tol.newton_steps);
        let ll_next = e_step(&stats, &next, &mut resp);
        if !(ll_next >= ll - slack) {
            return Err(Error::Internal(format!("EM sweep {it} lowered the log-likelihood from {ll} to {ll_next}")));
        }
        trace.push(ll_next);
        theta = next;
        let delta = ll_next - ll;
        ll = ll_next;
        if delta.abs() < tol_f {
            converged = true;
            break;
        }
    }
    let reason = if converged { "log-likelihood change below tolerance" } else { "iteration limit" };
    finish_fit("em", &stats, excluded, &theta, bx, trace, converged, reason, iterations)
}
