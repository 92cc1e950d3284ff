//! Restarted local fits from a moment-based start and jittered copies of it.

use super::{direct_fit, em_fit, usable_stats, FitResult, Tolerances};
use crate::error::Result;
use crate::model::{MixtureParams, ParamBox};
use crate::simulate::SubjectRng;
use crate::stats;
use crate::suffstats::SuffStats;

/// Moment-based start: 1-D k-means on `U_i/V_i` for the centres; cluster
/// shares for the weights; within-cluster variance minus the mean of `1/V_i`
/// (floored at the box) for `omega2`.
pub fn moment_init(stats: &[SuffStats], m: usize, bx: &ParamBox) -> Result<MixtureParams> {
    let (stats, _) = usable_stats(stats, m)?;
    let ratios: Vec<f64> = stats.iter().map(SuffStats::ratio).collect();
    let n = ratios.len();
    let mut centers: Vec<f64> = (0..m).map(|k| stats::quantile(&ratios, (k as f64 + 0.5) / m as f64)).collect();
    let mut assign = vec![usize::MAX; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, r) in ratios.iter().enumerate() {
            let best = (0..m).min_by(|&a, &b| (r - centers[a]).abs().total_cmp(&(r - centers[b]).abs())).unwrap_or(0);
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        for (k, c) in centers.iter_mut().enumerate() {
            let members: Vec<f64> = (0..n).filter(|&i| assign[i] == k).map(|i| ratios[i]).collect();
            if !members.is_empty() {
                *c = stats::mean(&members);
            }
        }
        if !changed {
            break;
        }
    }
    let overall = stats::variance(&ratios);
    let mut weights = Vec::with_capacity(m);
    let mut omega2 = Vec::with_capacity(m);
    for k in 0..m {
        let idx: Vec<usize> = (0..n).filter(|&i| assign[i] == k).collect();
        weights.push(idx.len() as f64 / n as f64);
        let members: Vec<f64> = idx.iter().map(|&i| ratios[i]).collect();
        let inv_v: Vec<f64> = idx.iter().map(|&i| 1.0 / stats[i].v).collect();
        let var = if members.len() >= 2 { stats::variance(&members) } else { overall };
        let noise = if inv_v.is_empty() { 0.0 } else { stats::mean(&inv_v) };
        omega2.push((var - noise).max(bx.omega2[0]));
    }
    Ok(bx.clamp(&MixtureParams::new(weights, centers, omega2)))
}

/// Random perturbation of `base`: means by `0.5 * spread` standard normal
/// steps, variances and weights by log-normal factors.
pub fn jittered_init(base: &MixtureParams, bx: &ParamBox, spread: f64, rng: &mut SubjectRng) -> MixtureParams {
    let m = base.components();
    let mut theta = base.clone();
    for k in 0..m {
        theta.mu[k] += 0.5 * spread * rng.standard_normal();
        theta.omega2[k] *= (0.5 * rng.standard_normal()).exp();
        theta.weights[k] *= (0.5 * rng.standard_normal()).exp();
    }
    let total: f64 = theta.weights.iter().sum();
    theta.weights.iter_mut().for_each(|a| *a /= total);
    bx.clamp(&theta)
}

#[derive(Clone, Debug)]
pub struct MultistartFit {
    pub best: FitResult,
    pub best_index: usize,
    /// Final log-likelihood of every restart, in start order.
    pub restart_logliks: Vec<f64>,
}

/// EM from `restarts` starts (the moment start, then jittered copies drawn
/// from `seed`) plus any `extra` starts; the highest final log-likelihood
/// wins, ties going to the earliest start.
pub fn multistart_fit(
    stats: &[SuffStats],
    m: usize,
    bx: &ParamBox,
    restarts: usize,
    seed: u64,
    tol: &Tolerances,
    extra: &[MixtureParams],
) -> Result<MultistartFit> {
    let mut out = multistart_with(stats, m, bx, restarts, seed, tol, extra, em_fit)?;
    out.best.method = "multistart".into();
    Ok(out)
}

/// [`multistart_fit`] with [`direct_fit`] as the local solver.
pub fn multistart_direct_fit(
    stats: &[SuffStats],
    m: usize,
    bx: &ParamBox,
    restarts: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<MultistartFit> {
    multistart_with(stats, m, bx, restarts, seed, tol, &[], direct_fit)
}

type LocalSolver = fn(&[SuffStats], usize, &ParamBox, &MixtureParams, &Tolerances) -> Result<FitResult>;

#[allow(clippy::too_many_arguments)]
fn multistart_with(
    stats: &[SuffStats],
    m: usize,
    bx: &ParamBox,
    restarts: usize,
    seed: u64,
    tol: &Tolerances,
    extra: &[MixtureParams],
    solve: LocalSolver,
) -> Result<MultistartFit> {
    let base = moment_init(stats, m, bx)?;
    let ratios: Vec<f64> = stats.iter().filter(|s| s.v > 0.0).map(SuffStats::ratio).collect();
    let spread = stats::std_dev(&ratios);
    let mut starts = vec![base.clone()];
    for r in 1..restarts.max(1) {
        let mut rng = SubjectRng::new(seed, r as u64);
        starts.push(jittered_init(&base, bx, spread, &mut rng));
    }
    starts.extend_from_slice(extra);
    let mut best: Option<(usize, FitResult)> = None;
    let mut logliks = Vec::with_capacity(starts.len());
    for (i, init) in starts.iter().enumerate() {
        let fit = solve(stats, m, bx, init, tol)?;
        logliks.push(fit.loglik);
        if best.as_ref().is_none_or(|(_, b)| fit.loglik > b.loglik) {
            best = Some((i, fit));
        }
    }
    let (best_index, best) = best.expect("at least one start");
    Ok(MultistartFit { best, best_index, restart_logliks: logliks })
}
