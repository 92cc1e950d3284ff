//! Choice of the number of components by BIC.

use serde::Serialize;

use super::{multistart_fit, FitResult, Tolerances};
use crate::error::{Error, Result};
use crate::model::{MixtureParams, ParamBox};
use crate::suffstats::SuffStats;

/// `-2 loglik + (3M - 1) log n`.
pub fn bic(loglik: f64, m: usize, n: usize) -> f64 {
    -2.0 * loglik + (3 * m - 1) as f64 * (n as f64).ln()
}

#[derive(Clone, Debug, Serialize)]
pub struct BicRow {
    pub m: usize,
    pub loglik: f64,
    pub bic: f64,
    pub free_params: usize,
    pub fit: FitResult,
}

#[derive(Clone, Debug, Serialize)]
pub struct BicSelection {
    /// The selected `M`.
    pub best: usize,
    pub rows: Vec<BicRow>,
}

/// `theta` with its heaviest component split into two identical halves;
/// same likelihood, one more component.
fn split_heaviest(theta: &MixtureParams, a_min: f64) -> Option<MixtureParams> {
    let k = (0..theta.components()).max_by(|&a, &b| theta.weights[a].total_cmp(&theta.weights[b]))?;
    let half = theta.weights[k] / 2.0;
    if half < a_min {
        return None;
    }
    let mut out = theta.clone();
    out.weights[k] = half;
    out.weights.push(half);
    out.mu.push(theta.mu[k]);
    out.omega2.push(theta.omega2[k]);
    Some(out)
}

/// Fits every `M` in `m_range` by [`multistart_fit`] and picks the smallest
/// BIC, ties going to the smaller `M`. Each fit also starts from the previous
/// (smaller) winner with a component split in two, so the maximized
/// log-likelihood cannot fall as `M` grows.
pub fn bic_select(
    stats: &[SuffStats],
    m_range: &[usize],
    bx: &ParamBox,
    restarts: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<BicSelection> {
    let mut ms = m_range.to_vec();
    ms.sort_unstable();
    ms.dedup();
    if ms.is_empty() || ms[0] == 0 {
        return Err(Error::Precondition("component range must be nonempty and positive".into()));
    }
    let mut rows: Vec<BicRow> = Vec::with_capacity(ms.len());
    for &m in &ms {
        let mut extra = Vec::new();
        if let Some(prev) = rows.last() {
            let mut theta = Some(prev.fit.theta.clone());
            for _ in prev.m..m {
                theta = theta.and_then(|t| split_heaviest(&t, bx.a_min));
            }
            extra.extend(theta);
        }
        let fit = multistart_fit(stats, m, bx, restarts, seed, tol, &extra)?.best;
        rows.push(BicRow { m, loglik: fit.loglik, bic: bic(fit.loglik, m, fit.n), free_params: 3 * m - 1, fit });
    }
    let best = rows
        .iter()
        .fold(None::<&BicRow>, |b, r| match b {
            Some(b) if b.bic <= r.bic => Some(b),
            _ => Some(r),
        })
        .map(|r| r.m)
        .unwrap_or(ms[0]);
    Ok(BicSelection { best, rows })
}
