//! Numerical integration oracles, written without reference to the closed
//! forms they check.

use mixfx::multidim::VecSuffStats;
use mixfx::MixtureParams;
use nalgebra::{DMatrix, DVector};

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let legendre = |z: f64| {
        let (mut p0, mut p1) = (1.0, z);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        (p1, n as f64 * (z * p1 - p0) / (z * z - 1.0))
    };
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(z);
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Composite rule on [lo, hi]: `panels` panels of `order` nodes each.
pub fn composite_rule(lo: f64, hi: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(order);
    let h = (hi - lo) / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let c = lo + (p as f64 + 0.5) * h;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((c + 0.5 * h * xi, 0.5 * h * wi));
        }
    }
    out
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Adaptive Simpson on [a, b] to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `log int exp(phi U - phi^2 V / 2) N(phi; mu, omega2) dphi` by adaptive
/// Simpson around the integrand's peak, to relative accuracy ~1e-12.
pub fn log_f_adaptive(u: f64, v: f64, mu: f64, omega2: f64) -> f64 {
    let h = |phi: f64| {
        phi * u
            - 0.5 * phi * phi * v
            - (phi - mu).powi(2) / (2.0 * omega2)
            - 0.5 * (2.0 * std::f64::consts::PI * omega2).ln()
    };
    let prec = v + 1.0 / omega2;
    let peak = (u + mu / omega2) / prec;
    let width = 40.0 / prec.sqrt();
    let c = h(peak);
    let g = |phi: f64| (h(phi) - c).exp();
    // the shifted integral is of order width / 40
    let tol = 1e-13 * width / 40.0;
    c + adaptive_simpson(&g, peak - width, peak + width, tol).ln()
}

/// `log sum_k a_k f_k` with each `f_k` from [`log_f_adaptive`].
pub fn log_lambda_adaptive(u: f64, v: f64, theta: &MixtureParams) -> f64 {
    let terms: Vec<f64> = (0..theta.components())
        .map(|k| theta.weights[k].ln() + log_f_adaptive(u, v, theta.mu[k], theta.omega2[k]))
        .collect();
    log_sum_exp(&terms)
}

/// `log int exp(phi^T U - phi^T V phi / 2) N(phi; mu, Sigma) dphi` for d = 2,
/// with `phi = mu + L z` and a tensor rule on z in [-12, 12]^2.
pub fn log_f_tensor_2d(s: &VecSuffStats, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    let l = sigma.clone().cholesky().unwrap().l();
    let rule = composite_rule(-12.0, 12.0, 48, 8);
    let log_norm = -(2.0 * std::f64::consts::PI).ln();
    let mut terms = Vec::with_capacity(rule.len() * rule.len());
    for &(z1, w1) in &rule {
        for &(z2, w2) in &rule {
            let z = DVector::from_vec(vec![z1, z2]);
            let phi = mu + &l * &z;
            let log_lik = phi.dot(&s.u) - 0.5 * phi.dot(&(&s.v * &phi));
            terms.push((w1 * w2).ln() + log_norm - 0.5 * z.dot(&z) + log_lik);
        }
    }
    log_sum_exp(&terms)
}
