//! Maximum-likelihood fitting: EM/ECM, dense BFGS in the chart, multistart,
//! BIC model choice and Fisher-information estimates.

mod bfgs;
mod bic;
mod direct;
mod em;
mod info;
mod multistart;

pub use bfgs::{maximize, BfgsOptions, BfgsResult};
pub use bic::{bic, bic_select, BicRow, BicSelection};
pub use direct::direct_fit;
pub use em::em_fit;
pub use info::{expected_info_designs, expected_info_mc, info_from_stats, observed_info, InfoEstimate};
pub use multistart::{jittered_init, moment_init, multistart_direct_fit, multistart_fit, MultistartFit};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MixtureParams;
use crate::suffstats::{SuffStats, MIN_V};

/// Stopping rules shared by the solvers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// EM stops once `|delta loglik| < tol_f_per_subject * n`.
    pub tol_f_per_subject: f64,
    pub max_iter: usize,
    /// Newton steps on each `omega2_k` per ECM sweep.
    pub newton_steps: usize,
    /// BFGS stops once `|grad|_inf < grad_tol * max(1, min(|loglik|, n))`.
    pub grad_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { tol_f_per_subject: 1e-8, max_iter: 500, newton_steps: 1, grad_tol: 1e-6 }
    }
}

impl Tolerances {
    /// Much tighter than the default, for solver cross-checks.
    pub fn tight() -> Self {
        Self { tol_f_per_subject: 1e-13, max_iter: 5000, newton_steps: 3, grad_tol: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: String,
    /// Canonically labelled estimate.
    pub theta: MixtureParams,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub reason: String,
    pub iterations: usize,
    /// Subjects used.
    pub n: usize,
    /// Subjects dropped for `V < MIN_V`.
    pub excluded: usize,
    /// `-Hessian` of the log-likelihood at `theta` in the chart.
    pub observed_info: Vec<Vec<f64>>,
    pub on_boundary: bool,
}

impl FitResult {
    pub fn observed_info_matrix(&self) -> DMatrix<f64> {
        let d = self.observed_info.len();
        DMatrix::from_fn(d, d, |i, j| self.observed_info[i][j])
    }

    /// `Sigma_n`, the inverse of the observed information, if it is positive
    /// definite.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        self.observed_info_matrix().cholesky().map(|c| c.inverse())
    }

    pub fn free_params(&self) -> usize {
        3 * self.theta.components() - 1
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Drops subjects with `V < MIN_V`; returns the kept statistics and the
/// number dropped.
pub(crate) fn usable_stats(stats: &[SuffStats], m: usize) -> Result<(Vec<SuffStats>, usize)> {
    let kept: Vec<SuffStats> = stats.iter().filter(|s| s.v >= MIN_V).copied().collect();
    let excluded = stats.len() - kept.len();
    if kept.is_empty() && !stats.is_empty() {
        return Err(Error::Estimation("all subjects are degenerate (V < 1e-12)".into()));
    }
    if kept.len() < 3 * m {
        return Err(Error::Precondition(format!("{} usable subjects, need at least 3M = {}", kept.len(), 3 * m)));
    }
    for (i, s) in kept.iter().enumerate() {
        if !s.u.is_finite() || !s.v.is_finite() {
            return Err(Error::DegenerateStats { u: s.u, v: s.v }.for_subject(i));
        }
    }
    Ok((kept, excluded))
}

/// Canonicalizes `theta` and attaches the observed information.
#[allow(clippy::too_many_arguments)]
pub(crate) fn finish_fit(
    method: &str,
    stats: &[SuffStats],
    excluded: usize,
    theta: &MixtureParams,
    bx: &crate::model::ParamBox,
    trace: Vec<f64>,
    converged: bool,
    reason: &str,
    iterations: usize,
) -> Result<FitResult> {
    let theta = crate::model::canonicalize_labels(theta);
    let lg = crate::likelihood::grad_hess_loglik(stats, &theta, bx)?;
    Ok(FitResult {
        method: method.into(),
        loglik: lg.value,
        theta,
        loglik_trace: trace,
        converged,
        reason: reason.into(),
        iterations,
        n: stats.len(),
        excluded,
        observed_info: matrix_rows(&(-lg.hessian)),
        on_boundary: lg.on_boundary,
    })
}

/// Checks the box against `m` and brings `init` inside it.
pub(crate) fn prepare_init(init: &MixtureParams, m: usize, bx: &crate::model::ParamBox) -> Result<MixtureParams> {
    let v = bx.check(m);
    if !v.is_empty() {
        return Err(Error::InvalidParams(v));
    }
    if init.components() != m {
        return Err(Error::ComponentMismatch { left: init.components(), right: m });
    }
    let theta = bx.clamp(init);
    crate::model::ensure_valid(&theta, bx)?;
    Ok(theta)
}
