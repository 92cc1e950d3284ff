//! Whitened posterior draws `Psi = L^{-1}(x - x_hat)` and their normality
//! diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::mcmc::chart_labels;
use crate::chart::Chart;
use crate::error::Result;
use crate::model::{match_labels, MixtureParams};
use crate::stats::{excess_kurtosis, ks_critical, ks_normal, skewness};

#[derive(Clone, Debug)]
pub struct PsiDraws {
    pub psi: Vec<Vec<f64>>,
    /// Set when the observed information was not positive definite and the
    /// identity was used instead.
    pub identity_fallback: bool,
}

/// Relabels each draw to best match `theta_hat`, maps it to the chart and
/// whitens it with the lower Cholesky factor `L` of
/// `Sigma_n = observed_info^{-1}`.
pub fn psi_transform(
    draws: &[MixtureParams],
    theta_hat: &MixtureParams,
    observed_info: &DMatrix<f64>,
    a_min: f64,
) -> Result<PsiDraws> {
    let chart = Chart::new(theta_hat.components(), a_min);
    let d = chart.dim();
    let center = DVector::from_vec(chart.from_params(theta_hat));
    let factor =
        observed_info.clone().cholesky().map(|c| c.inverse()).and_then(|sigma| sigma.cholesky()).map(|c| c.l());
    let identity_fallback = factor.is_none();
    let l = factor.unwrap_or_else(|| DMatrix::identity(d, d));
    let psi = draws
        .iter()
        .map(|theta| {
            let matched = match_labels(theta, theta_hat)?;
            let x = DVector::from_vec(chart.from_params(&matched)) - &center;
            Ok(l.solve_lower_triangular(&x).unwrap_or(x).as_slice().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PsiDraws { psi, identity_fallback })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalityThresholds {
    /// Absolute KS cap; when absent the `alpha` critical value for the
    /// number of draws is used.
    pub ks_max: Option<f64>,
    pub alpha: f64,
    pub skew_max: f64,
    pub kurtosis_max: f64,
}

impl Default for NormalityThresholds {
    fn default() -> Self {
        Self { ks_max: None, alpha: 0.01, skew_max: 0.5, kurtosis_max: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordReport {
    pub label: String,
    pub ks: f64,
    pub ks_limit: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub skew_flag: bool,
    pub kurtosis_flag: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub coords: Vec<CoordReport>,
    pub identity_fallback: bool,
    pub pass: bool,
}

/// Per-coordinate KS distance to the standard normal, skewness and excess
/// kurtosis of whitened draws.
pub fn posterior_normality_report(psi: &PsiDraws, thresholds: &NormalityThresholds) -> NormalityReport {
    let d = psi.psi.first().map_or(0, Vec::len);
    let m = (d + 1) / 3;
    let labels = if 3 * m == d + 1 { chart_labels(m) } else { (1..=d).map(|j| format!("x_{j}")).collect() };
    let n = psi.psi.len();
    let limit = thresholds.ks_max.unwrap_or_else(|| ks_critical(thresholds.alpha, n));
    let coords: Vec<CoordReport> = (0..d)
        .map(|j| {
            let xs: Vec<f64> = psi.psi.iter().map(|p| p[j]).collect();
            let ks = ks_normal(&xs);
            let sk = skewness(&xs);
            let ku = excess_kurtosis(&xs);
            let skew_flag = sk.abs() > thresholds.skew_max;
            let kurtosis_flag = ku.abs() > thresholds.kurtosis_max;
            CoordReport {
                label: labels[j].clone(),
                ks,
                ks_limit: limit,
                skewness: sk,
                excess_kurtosis: ku,
                skew_flag,
                kurtosis_flag,
                pass: ks <= limit && !skew_flag && !kurtosis_flag,
            }
        })
        .collect();
    NormalityReport { pass: coords.iter().all(|c| c.pass), identity_fallback: psi.identity_fallback, coords }
}
