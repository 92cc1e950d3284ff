//! Direct maximization of the log-likelihood by BFGS in the chart.

use super::bfgs::{maximize, BfgsOptions};
use super::{finish_fit, prepare_init, usable_stats, FitResult, Tolerances};
use crate::chart::Chart;
use crate::error::Result;
use crate::likelihood::grad_hess_loglik;
use crate::model::{MixtureParams, ParamBox};
use crate::suffstats::SuffStats;

fn inside(theta: &MixtureParams, bx: &ParamBox) -> bool {
    theta.mu.iter().all(|m| *m >= bx.mu[0] && *m <= bx.mu[1])
        && theta.omega2.iter().all(|w| *w >= bx.omega2[0] && *w <= bx.omega2[1])
}

/// Fits an `m`-component mixture by quasi-Newton ascent from `init`.
/// Trial points leaving the mean/variance box are rejected by the line
/// search; if it cannot make progress the best point so far is returned with
/// `converged = false`.
pub fn direct_fit(
    stats: &[SuffStats],
    m: usize,
    bx: &ParamBox,
    init: &MixtureParams,
    tol: &Tolerances,
) -> Result<FitResult> {
    let (stats, excluded) = usable_stats(stats, m)?;
    let theta0 = prepare_init(init, m, bx)?;
    let chart = Chart::new(m, bx.a_min);
    let x0 = chart.from_params(&theta0);
    let objective = |x: &[f64]| {
        let theta = chart.to_params(x);
        if !inside(&theta, bx) {
            return None;
        }
        let lg = grad_hess_loglik(&stats, &theta, bx).ok()?;
        Some((lg.value, lg.gradient.as_slice().to_vec()))
    };
    let opts = BfgsOptions {
        max_iter: tol.max_iter,
        grad_tol: tol.grad_tol,
        // The log-likelihood carries the theta-free term sum U^2 / 2V, so its
        // magnitude says little about the gradient scale; cap it at n.
        scale: stats.len() as f64,
        ..Default::default()
    };
    let res = maximize(objective, &x0, &opts)?;
    let theta = chart.to_params(&res.x);
    finish_fit("direct", &stats, excluded, &theta, bx, res.trace, res.converged, &res.reason, res.iterations)
}
