//! Analytic bounds on log-likelihood ratios and scaled derivatives, exposed
//! as numeric checks.

use super::{component_derivs, log_f_unchecked, responsibilities_into};
use crate::model::MixtureParams;
use crate::suffstats::SuffStats;

/// `(mu, omega2)` of one component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Component {
    pub mu: f64,
    pub omega2: f64,
}

impl Component {
    pub fn new(mu: f64, omega2: f64) -> Self {
        Self { mu, omega2 }
    }
}

/// The five-term bound `C1(U, V, beta1, beta0)` on
/// `log f(X|beta0) - log f(X|beta1)`, term by term as published.
///
/// This omits the nonnegative term `mu1^2 V / (2(1 + omega1^2 V))` of the
/// exact expansion, so it is not a valid upper bound when `mu1 != 0`; see
/// [`c1_bound_corrected`].
pub fn c1_bound(s: &SuffStats, beta1: Component, beta0: Component) -> f64 {
    let (u, v) = (s.u, s.v);
    let (m1, w1, m0, w0) = (beta1.mu, beta1.omega2, beta0.mu, beta0.omega2);
    let s0 = 1.0 + w0 * v;
    let dw = (w0 - w1).abs();
    let q = u / s0;
    0.5 * ((1.0 + w1 / w0).ln() + dw / w1)
        + 0.5 * dw * q * q * (1.0 + w0 / w1)
        + m1.abs() * q.abs() * (1.0 + dw / w1)
        + (m0 * m0 * v / (2.0 * s0)).abs()
        + (m0 * u / s0).abs()
}

/// [`c1_bound`] plus the missing `mu1^2 V / (2(1 + omega1^2 V))` term.
pub fn c1_bound_corrected(s: &SuffStats, beta1: Component, beta0: Component) -> f64 {
    let s1 = 1.0 + beta1.omega2 * s.v;
    c1_bound(s, beta1, beta0) + beta1.mu * beta1.mu * s.v / (2.0 * s1)
}

/// `log f(X|beta0) - log f(X|beta1)`.
pub fn component_log_ratio(s: &SuffStats, beta1: Component, beta0: Component) -> f64 {
    log_f_unchecked(s.u, s.v, beta0.mu, beta0.omega2) - log_f_unchecked(s.u, s.v, beta1.mu, beta1.omega2)
}

/// `sum_k C(U, V, beta_1, beta0_k) + |log a_1|`, bounding
/// `log lambda(X|theta0) - log lambda(X|theta)` from above, with `C` either
/// [`c1_bound`] or [`c1_bound_corrected`].
pub fn mixture_log_ratio_bound(
    s: &SuffStats,
    theta: &MixtureParams,
    theta0: &MixtureParams,
    c: fn(&SuffStats, Component, Component) -> f64,
) -> f64 {
    let beta1 = Component::new(theta.mu[0], theta.omega2[0]);
    let sum: f64 = (0..theta0.components()).map(|k| c(s, beta1, Component::new(theta0.mu[k], theta0.omega2[k]))).sum();
    sum + theta.weights[0].ln().abs()
}

/// Checks `|log sum_k a_k f_k| <= sum_k |log f_k|` for weights on the
/// simplex and positive `f`. Works in the log domain: `log_f[k] = log f_k`.
pub fn logsum_inequality_check(weights: &[f64], log_f: &[f64]) -> bool {
    let max = log_f.iter().zip(weights).filter(|(_, a)| **a > 0.0).map(|(l, _)| *l).fold(f64::NEG_INFINITY, f64::max);
    let acc: f64 = log_f.iter().zip(weights).map(|(l, a)| a * (l - max).exp()).sum();
    let lhs = (max + acc.ln()).abs();
    let rhs: f64 = log_f.iter().map(|l| l.abs()).sum();
    lhs <= rhs * (1.0 + 1e-12) + 1e-300
}

/// Labels of the ten scaled-derivative quantities, in bound order.
pub const S2_LABELS: [&str; 10] = [
    "f/lambda",
    "df/dmu",
    "df/dw",
    "d2f/dmu2",
    "d2f/dw2",
    "d2f/dmu dw",
    "d3f/dmu3",
    "d3f/dmu2 dw",
    "d3f/dmu dw2",
    "d3f/dw3",
];

/// Upper bounds on `|(1/lambda) d^j (a_k f_k)|`, `w = omega2`, with
/// `B = mu_max + |U/V|`.
pub fn s2_bounds(s: &SuffStats, mu_max: f64) -> [f64; 10] {
    let v = s.v;
    let b = mu_max + (s.u / s.v).abs();
    let (v2, v3, v4, v5, v6) = (v * v, v.powi(3), v.powi(4), v.powi(5), v.powi(6));
    [
        1.0,
        v * b,
        v + v2 * b * b,
        v + v2 * b * b,
        v2 + 3.0 * v3 * b * b + v4 * b.powi(4),
        2.0 * v2 * b + v3 * b.powi(3),
        3.0 * v2 * b + v3 * b.powi(3),
        2.0 * v2 + 3.0 * v3 * b * b + v4 * b.powi(4),
        4.0 * v3 * b + 4.0 * v4 * b.powi(3) + v4 * b.powi(5),
        2.0 * v3 + 11.0 * v4 * b * b + 5.0 * v5 * b.powi(4) + v6 * b.powi(6),
    ]
}

/// `(a_k / lambda0) * (d2f/dmu2, d2f/dmu dw, d2f/dw2)` at `(mu, w)` with the
/// normalizer `log(a_k / lambda0) = log_scale` held fixed.
pub fn scaled_second_derivs(s: &SuffStats, log_scale: f64, mu: f64, w: f64) -> [f64; 3] {
    let cd = component_derivs(s.u, s.v, mu, w);
    let r = (log_scale + cd.log_f).exp();
    [r * (cd.d_mu * cd.d_mu + cd.d_mu_mu), r * (cd.d_mu * cd.d_w + cd.d_mu_w), r * (cd.d_w * cd.d_w + cd.d_w_w)]
}

/// Central difference of `g` at `x` with step `h`, Richardson-extrapolated once.
fn richardson(g: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    let d = |h: f64| (g(x + h) - g(x - h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

/// Nominal step for the finite-difference third derivatives.
pub const S2_FD_STEP: f64 = 1e-3;

/// The ten scaled quantities `|(1/lambda) d^j (a_k f_k)|` for component `k`;
/// orders 0-2 analytic, order 3 by finite differences of the analytic
/// second derivatives.
pub fn s2_scaled_derivatives(s: &SuffStats, theta: &MixtureParams, k: usize) -> [f64; 10] {
    let mut resp = vec![0.0; theta.components()];
    let log_lambda = responsibilities_into(s.u, s.v, theta, &mut resp);
    let (mu, w) = (theta.mu[k], theta.omega2[k]);
    let r = resp[k];
    let cd = component_derivs(s.u, s.v, mu, w);
    let log_scale = theta.weights[k].ln() - log_lambda;
    // Shrink the nominal step where f varies by more than ~1% over it.
    let h_mu = S2_FD_STEP.min(0.01 / cd.d_mu.abs().max(1e-300));
    let h_w = S2_FD_STEP.min(0.25 * w).min(0.01 / cd.d_w.abs().max(1e-300));
    let d3_mu3 = richardson(|x| scaled_second_derivs(s, log_scale, x, w)[0], mu, h_mu);
    let d3_mu2w = richardson(|x| scaled_second_derivs(s, log_scale, mu, x)[0], w, h_w);
    let d3_muw2 = richardson(|x| scaled_second_derivs(s, log_scale, x, w)[2], mu, h_mu);
    let d3_w3 = richardson(|x| scaled_second_derivs(s, log_scale, mu, x)[2], w, h_w);
    [
        r,
        r * cd.d_mu,
        r * cd.d_w,
        r * (cd.d_mu * cd.d_mu + cd.d_mu_mu),
        r * (cd.d_w * cd.d_w + cd.d_w_w),
        r * (cd.d_mu * cd.d_w + cd.d_mu_w),
        d3_mu3,
        d3_mu2w,
        d3_muw2,
        d3_w3,
    ]
    .map(f64::abs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SubjectDesign;

    fn st(u: f64, v: f64) -> SuffStats {
        SuffStats::new(u, v, SubjectDesign::new(1.0, 1.0))
    }

    #[test]
    fn c1_equal_components_zero_u() {
        let b = Component::new(0.0, 1.0);
        assert!((c1_bound(&st(0.0, 1.3), b, b) - 0.5 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn c1_with_zero_mu1_drops_third_term() {
        let s = st(1.7, 2.2);
        let (b1, b0) = (Component::new(0.0, 0.7), Component::new(1.5, 2.0));
        let s0 = 1.0 + 2.0 * 2.2;
        let dw = 1.3;
        let q = 1.7 / s0;
        let four = 0.5 * ((1.0 + 0.7 / 2.0f64).ln() + dw / 0.7)
            + 0.5 * dw * q * q * (1.0 + 2.0 / 0.7)
            + 1.5 * 1.5 * 2.2 / (2.0 * s0)
            + 1.5 * 1.7 / s0;
        assert!((c1_bound(&s, b1, b0) - four).abs() < 1e-14);
        assert_eq!(c1_bound(&s, b1, b0), c1_bound_corrected(&s, b1, b0));
    }

    #[test]
    fn printed_c1_fails_where_the_corrected_bound_holds() {
        // U = 0, equal variances: the exact log-ratio is mu1^2 V / (2(1 + w V)).
        let s = st(0.0, 1.0);
        let (b1, b0) = (Component::new(5.0, 1.0), Component::new(0.0, 1.0));
        let ratio = component_log_ratio(&s, b1, b0);
        assert!((ratio - 6.25).abs() < 1e-12);
        assert!(ratio > c1_bound(&s, b1, b0));
        assert!(ratio <= c1_bound_corrected(&s, b1, b0));
    }

    #[test]
    fn logsum_inequality_edge_cases() {
        assert!(logsum_inequality_check(&[0.5, 0.5], &[0.0, 0.0]));
        assert!(logsum_inequality_check(&[1.0, 0.0, 0.0], &[2.0, -1.0, 0.5]));
    }

    #[test]
    fn s2_mu_omega_omega_bound_has_a_pointwise_counterexample() {
        // Small omega2 with large V: the exact term grows like V^5 D^5 / (4 s^5).
        let theta = MixtureParams::single(5.0, 0.01);
        let s = st(-10.0 * 60.0, 10.0);
        let lhs = s2_scaled_derivatives(&s, &theta, 0);
        let rhs = s2_bounds(&s, 5.0);
        assert!(lhs[8] > rhs[8]);
        for j in [0, 1, 2, 3, 4, 5, 6, 7, 9] {
            assert!(lhs[j] <= rhs[j] * 1.01, "{} {} {}", S2_LABELS[j], lhs[j], rhs[j]);
        }
    }
}
