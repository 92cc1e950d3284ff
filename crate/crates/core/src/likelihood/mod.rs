//! Closed-form per-subject mixture likelihood and its analytic derivatives.
//!
//! The component density is
//!
//! ```text
//! f(X | mu, w) = (1 + wV)^{-1/2} exp(-V (mu - U/V)^2 / (2(1 + wV))) exp(U^2 / (2V))
//! ```
//!
//! which we evaluate in the algebraically equivalent form
//! `log f = (2 mu U - mu^2 V + w U^2) / (2(1 + wV)) - log(1 + wV) / 2`. The
//! theta-free factor `exp(U^2/2V)` is kept, so `log_lambda` is the log of the
//! exact marginal likelihood `int g(phi) exp(phi U - phi^2 V / 2) dphi`.

pub mod bounds;

use nalgebra::{DMatrix, DVector};

use crate::chart::Chart;
use crate::error::{Error, Result};
use crate::model::{MixtureParams, ParamBox};
use crate::stats::pairwise_sum;
use crate::suffstats::{SuffStats, MIN_V};

fn check_stats(s: &SuffStats) -> Result<()> {
    if s.v < 0.0 || !s.v.is_finite() || !s.u.is_finite() {
        return Err(Error::DegenerateStats { u: s.u, v: s.v });
    }
    if s.v < MIN_V && s.u != 0.0 {
        return Err(Error::DegenerateStats { u: s.u, v: s.v });
    }
    Ok(())
}

/// `log f` without input checks.
#[inline]
pub fn log_f_unchecked(u: f64, v: f64, mu: f64, omega2: f64) -> f64 {
    let s = 1.0 + omega2 * v;
    (mu * (2.0 * u - mu * v) + omega2 * u * u) / (2.0 * s) - 0.5 * s.ln()
}

/// Log component density `log f(X | mu, omega2)`.
pub fn log_f(s: &SuffStats, mu: f64, omega2: f64) -> Result<f64> {
    check_stats(s)?;
    if omega2 < 0.0 {
        return Err(Error::Precondition(format!("omega2 = {omega2} < 0")));
    }
    Ok(log_f_unchecked(s.u, s.v, mu, omega2))
}

/// Log-sum-exp of `terms` after sorting, so the result does not depend on
/// the order in which the terms are supplied.
#[inline]
fn sorted_log_sum_exp(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    let max = terms[terms.len() - 1];
    if max == f64::NEG_INFINITY {
        return max;
    }
    let mut acc = 0.0;
    for t in terms.iter() {
        acc += (t - max).exp();
    }
    max + acc.ln()
}

/// Per-subject log mixture likelihood `log sum_k a_k f(X | beta_k)`.
pub fn log_lambda(s: &SuffStats, theta: &MixtureParams) -> Result<f64> {
    check_stats(s)?;
    Ok(log_lambda_unchecked(s.u, s.v, theta))
}

#[inline]
pub fn log_lambda_unchecked(u: f64, v: f64, theta: &MixtureParams) -> f64 {
    let m = theta.components();
    if m == 1 {
        return theta.weights[0].ln() + log_f_unchecked(u, v, theta.mu[0], theta.omega2[0]);
    }
    let mut terms = [0.0f64; 16];
    let terms = if m <= 16 { &mut terms[..m] } else { return log_lambda_slow(u, v, theta) };
    for k in 0..m {
        terms[k] = theta.weights[k].ln() + log_f_unchecked(u, v, theta.mu[k], theta.omega2[k]);
    }
    sorted_log_sum_exp(terms)
}

fn log_lambda_slow(u: f64, v: f64, theta: &MixtureParams) -> f64 {
    let mut terms: Vec<f64> = (0..theta.components())
        .map(|k| theta.weights[k].ln() + log_f_unchecked(u, v, theta.mu[k], theta.omega2[k]))
        .collect();
    sorted_log_sum_exp(&mut terms)
}

/// Log-likelihood of the cohort, `sum_i log lambda_i`.
pub fn total_loglik(stats: &[SuffStats], theta: &MixtureParams) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::Precondition("empty statistics list".into()));
    }
    let terms = stats.iter().map(|s| log_lambda(s, theta)).collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&terms))
}

/// Posterior component probabilities `a_k f_k / lambda` for one subject.
pub fn responsibilities(s: &SuffStats, theta: &MixtureParams) -> Vec<f64> {
    let m = theta.components();
    let mut out = vec![0.0; m];
    responsibilities_into(s.u, s.v, theta, &mut out);
    out
}

/// Writes responsibilities into `out` and returns `log lambda`.
pub fn responsibilities_into(u: f64, v: f64, theta: &MixtureParams, out: &mut [f64]) -> f64 {
    let m = theta.components();
    let mut max = f64::NEG_INFINITY;
    for k in 0..m {
        out[k] = theta.weights[k].ln() + log_f_unchecked(u, v, theta.mu[k], theta.omega2[k]);
        max = max.max(out[k]);
    }
    let mut z = 0.0;
    for r in out.iter_mut() {
        *r = (*r - max).exp();
        z += *r;
    }
    for r in out.iter_mut() {
        *r /= z;
    }
    max + z.ln()
}

/// Derivatives of `log f` in `(mu, omega2)` at one subject.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComponentDerivs {
    pub log_f: f64,
    pub d_mu: f64,
    pub d_w: f64,
    pub d_mu_mu: f64,
    pub d_mu_w: f64,
    pub d_w_w: f64,
}

#[inline]
pub fn component_derivs(u: f64, v: f64, mu: f64, w: f64) -> ComponentDerivs {
    let s = 1.0 + w * v;
    let e = u - mu * v;
    ComponentDerivs {
        log_f: log_f_unchecked(u, v, mu, w),
        d_mu: e / s,
        d_w: e * e / (2.0 * s * s) - v / (2.0 * s),
        d_mu_mu: -v / s,
        d_mu_w: -e * v / (s * s),
        d_w_w: v * v / (2.0 * s * s) - e * e * v / (s * s * s),
    }
}

/// Value, gradient and Hessian of a log-likelihood in the chart
/// `(eta_1..eta_{M-1}, mu_1..mu_M, log omega2_1..log omega2_M)`.
#[derive(Clone, Debug)]
pub struct LogLikGrad {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    /// Set when theta touches the box boundary, where chart derivatives do
    /// not describe the constrained problem.
    pub on_boundary: bool,
}

/// Precomputed chart derivatives of `log a_k`, shared by all subjects.
pub(crate) struct WeightDerivs {
    grads: Vec<Vec<f64>>,
    hess: Vec<Vec<Vec<f64>>>,
}

impl WeightDerivs {
    pub(crate) fn new(chart: &Chart, x: &[f64]) -> Self {
        let m = chart.components;
        let (grads, hess) = (0..m).map(|k| chart.log_weight_derivs(x, k)).unzip();
        Self { grads, hess }
    }
}

/// Per-subject `(log lambda, score, Hessian)` in the chart, accumulated into
/// `grad`/`hess` (which are overwritten).
pub(crate) fn subject_grad_hess(
    u: f64,
    v: f64,
    theta: &MixtureParams,
    chart: &Chart,
    wd: &WeightDerivs,
    grad: &mut DVector<f64>,
    hess: &mut DMatrix<f64>,
) -> f64 {
    let m = theta.components();
    let d = chart.dim();
    let e = m - 1;
    let mut resp = vec![0.0; m];
    let loglam = responsibilities_into(u, v, theta, &mut resp);
    grad.fill(0.0);
    hess.fill(0.0);
    let mut gk = DVector::<f64>::zeros(d);
    for k in 0..m {
        let r = resp[k];
        let w = theta.omega2[k];
        let cd = component_derivs(u, v, theta.mu[k], w);
        let (im, il) = (chart.mu_index(k), chart.log_omega2_index(k));
        gk.fill(0.0);
        for j in 0..e {
            gk[j] = wd.grads[k][j];
        }
        gk[im] = cd.d_mu;
        gk[il] = w * cd.d_w;
        // r * (grad psi_k grad psi_k^T + hess psi_k)
        for i in 0..d {
            if gk[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                hess[(i, j)] += r * gk[i] * gk[j];
            }
        }
        for i in 0..e {
            for j in 0..e {
                hess[(i, j)] += r * wd.hess[k][i][j];
            }
        }
        hess[(im, im)] += r * cd.d_mu_mu;
        hess[(im, il)] += r * w * cd.d_mu_w;
        hess[(il, im)] += r * w * cd.d_mu_w;
        hess[(il, il)] += r * (w * cd.d_w + w * w * cd.d_w_w);
        grad.axpy(r, &gk, 1.0);
    }
    for i in 0..d {
        for j in 0..d {
            hess[(i, j)] -= grad[i] * grad[j];
        }
    }
    loglam
}

/// Analytic gradient and Hessian of `total_loglik` in the chart.
pub fn grad_hess_loglik(stats: &[SuffStats], theta: &MixtureParams, bx: &ParamBox) -> Result<LogLikGrad> {
    if stats.is_empty() {
        return Err(Error::Precondition("empty statistics list".into()));
    }
    for s in stats {
        check_stats(s)?;
    }
    let chart = Chart::new(theta.components(), bx.a_min);
    let x = chart.from_params(theta);
    let wd = WeightDerivs::new(&chart, &x);
    let d = chart.dim();
    let mut grad = DVector::zeros(d);
    let mut hess = DMatrix::zeros(d, d);
    let mut g = DVector::zeros(d);
    let mut h = DMatrix::zeros(d, d);
    let mut values = Vec::with_capacity(stats.len());
    for s in stats {
        values.push(subject_grad_hess(s.u, s.v, theta, &chart, &wd, &mut g, &mut h));
        grad += &g;
        hess += &h;
    }
    // exact symmetry
    let hess = (&hess + hess.transpose()) * 0.5;
    Ok(LogLikGrad {
        value: pairwise_sum(&values),
        gradient: grad,
        hessian: hess,
        on_boundary: bx.on_boundary(theta, 1e-9),
    })
}

/// Per-subject scores in the chart, one vector per subject.
pub fn subject_scores(stats: &[SuffStats], theta: &MixtureParams, a_min: f64) -> Vec<DVector<f64>> {
    let chart = Chart::new(theta.components(), a_min);
    let x = chart.from_params(theta);
    let wd = WeightDerivs::new(&chart, &x);
    let d = chart.dim();
    let mut h = DMatrix::zeros(d, d);
    stats
        .iter()
        .map(|s| {
            let mut g = DVector::zeros(d);
            subject_grad_hess(s.u, s.v, theta, &chart, &wd, &mut g, &mut h);
            g
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SubjectDesign;

    fn st(u: f64, v: f64) -> SuffStats {
        SuffStats::new(u, v, SubjectDesign::new(0.0, 1.0))
    }

    /// The single-Gaussian marginal exactly as printed, evaluated literally.
    fn literal_log_f(u: f64, v: f64, mu: f64, w: f64) -> f64 {
        let s = 1.0 + w * v;
        -0.5 * s.ln() - v / (2.0 * s) * (mu - u / v).powi(2) + u * u / (2.0 * v)
    }

    #[test]
    fn log_f_reference_values() {
        assert_eq!(log_f(&st(0.0, 1.0), 0.0, 0.0).unwrap(), 0.0);
        assert!((log_f(&st(1.0, 1.0), 1.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        let expected = -0.5 * 2f64.ln() - 0.25 + 0.5;
        assert!((log_f(&st(1.0, 1.0), 0.0, 1.0).unwrap() - expected).abs() < 1e-15);
        assert!((expected + 0.0965735902799727).abs() < 1e-13);
    }

    #[test]
    fn zero_v_requires_zero_u() {
        assert_eq!(log_f(&st(0.0, 0.0), 1.0, 1.0).unwrap(), 0.0);
        assert!(matches!(log_f(&st(1.0, 0.0), 1.0, 1.0), Err(Error::DegenerateStats { .. })));
    }

    #[test]
    fn mixture_of_reference_components() {
        let theta = MixtureParams::new(vec![0.5, 0.5], vec![1.0, 0.0], vec![0.0, 1.0]);
        let expected = (0.5 * 0.5f64.exp() + 0.5 * (-0.0965735902799727f64).exp()).ln();
        assert!((log_lambda(&st(1.0, 1.0), &theta).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn identical_components_collapse() {
        let theta = MixtureParams::new(vec![0.2, 0.3, 0.5], vec![0.7; 3], vec![0.4; 3]);
        let s = st(1.3, 2.1);
        let a = log_lambda(&s, &theta).unwrap();
        let b = log_f(&s, 0.7, 0.4).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn single_component_matches_literal_form() {
        for &(u, v, mu, w) in &[(1.0, 1.0, 0.0, 1.0), (-3.2, 4.5, 1.1, 0.3), (20.0, 12.0, 2.0, 0.01)] {
            let a = log_lambda(&st(u, v), &MixtureParams::single(mu, w)).unwrap();
            let b = literal_log_f(u, v, mu, w);
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs() + u * u / (2.0 * v)), "{a} {b}");
        }
    }

    #[test]
    fn mean_maximizes_at_zero_when_u_is_zero() {
        let s = st(0.0, 2.0);
        let best = (-200..=200)
            .map(|i| i as f64 * 0.01)
            .max_by(|a, b| log_f(&s, *a, 0.5).unwrap().total_cmp(&log_f(&s, *b, 0.5).unwrap()))
            .unwrap();
        assert_eq!(best, 0.0);
    }

    #[test]
    fn single_component_mu_score() {
        let bx = ParamBox::default();
        let g = grad_hess_loglik(&[st(1.0, 1.0)], &MixtureParams::single(0.0, 1.0), &bx).unwrap();
        assert!((g.gradient[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn duplicated_subject_doubles_loglik() {
        let theta = MixtureParams::new(vec![0.4, 0.6], vec![-1.0, 2.0], vec![0.25, 0.5]);
        let s = st(0.8, 1.7);
        let one = total_loglik(&[s], &theta).unwrap();
        let two = total_loglik(&[s, s], &theta).unwrap();
        assert_eq!(two, 2.0 * one);
        assert!(total_loglik(&[], &theta).is_err());
    }
}
