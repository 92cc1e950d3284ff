//! Posterior on the compact parameter space, random-walk Metropolis in the
//! chart, and normality diagnostics of whitened posterior draws.

mod mcmc;
mod normality;
mod prior;

pub use mcmc::{chart_labels, mh_sample, Chain, McmcOptions};
pub use normality::{
    posterior_normality_report, psi_transform, CoordReport, NormalityReport, NormalityThresholds, PsiDraws,
};
pub use prior::PriorSpec;

use crate::error::{Error, Result};
use crate::likelihood::total_loglik;
use crate::model::{validate_params, MixtureParams, ParamBox};
use crate::suffstats::SuffStats;

/// Unnormalized log posterior `log prior(theta) + loglik(theta)`; `-inf`
/// outside the box.
pub fn log_posterior(stats: &[SuffStats], theta: &MixtureParams, prior: &PriorSpec, bx: &ParamBox) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::Precondition("posterior needs at least one subject".into()));
    }
    if !validate_params(theta, bx).is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(prior.log_density(theta, bx) + total_loglik(stats, theta)?)
}
