//! Unconstrained coordinates for the compact parameter space.
//!
//! A point `x` of the chart has `3M - 1` coordinates ordered
//! `(eta_1..eta_{M-1}, mu_1..mu_M, log omega2_1..log omega2_M)`. Weights are
//! `a_k = a_min + (1 - M a_min) softmax(eta, 0)_k`, which maps onto the
//! interior of the floored simplex; means are untouched; variances are
//! log-transformed. The mean/variance box is not encoded by the chart and is
//! enforced by the callers.

use crate::model::MixtureParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Chart {
    pub components: usize,
    pub a_min: f64,
}

impl Chart {
    pub fn new(components: usize, a_min: f64) -> Self {
        Self { components, a_min }
    }

    pub fn dim(&self) -> usize {
        3 * self.components - 1
    }

    /// Mass shared by the free part of the weights.
    pub fn free_mass(&self) -> f64 {
        1.0 - self.components as f64 * self.a_min
    }

    pub fn mu_index(&self, k: usize) -> usize {
        self.components - 1 + k
    }

    pub fn log_omega2_index(&self, k: usize) -> usize {
        2 * self.components - 1 + k
    }

    /// Softmax probabilities `p` with the last logit pinned at zero.
    pub fn softmax(&self, x: &[f64]) -> Vec<f64> {
        let m = self.components;
        let mut logits: Vec<f64> = x[..m - 1].to_vec();
        logits.push(0.0);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    pub fn to_params(&self, x: &[f64]) -> MixtureParams {
        let m = self.components;
        let c = self.free_mass();
        let weights = self.softmax(x).into_iter().map(|p| self.a_min + c * p).collect();
        MixtureParams::new(weights, x[m - 1..2 * m - 1].to_vec(), x[2 * m - 1..].iter().map(|l| l.exp()).collect())
    }

    /// Inverse of [`Chart::to_params`]. Weights at (or below) the floor are
    /// nudged to `a_min + 1e-12 * (1 - M a_min)` so the chart stays finite.
    pub fn from_params(&self, theta: &MixtureParams) -> Vec<f64> {
        let m = self.components;
        let c = self.free_mass();
        let p: Vec<f64> = theta.weights.iter().map(|a| ((a - self.a_min) / c).max(1e-12)).collect();
        let mut x = Vec::with_capacity(self.dim());
        for k in 0..m - 1 {
            x.push(p[k].ln() - p[m - 1].ln());
        }
        x.extend_from_slice(&theta.mu);
        x.extend(theta.omega2.iter().map(|w| w.ln()));
        x
    }

    /// `log |det d(a_1..a_{M-1}, mu, omega2) / dx|`, the log-Jacobian of the
    /// map from chart to natural coordinates (with `a_M` eliminated).
    pub fn log_jacobian(&self, x: &[f64]) -> f64 {
        let m = self.components;
        let p = self.softmax(x);
        let weights_part = (m as f64 - 1.0) * self.free_mass().ln() + p.iter().map(|q| q.ln()).sum::<f64>();
        let var_part: f64 = x[2 * m - 1..].iter().sum();
        if m > 1 {
            weights_part + var_part
        } else {
            var_part
        }
    }

    /// Derivatives of `log a_k` w.r.t. `eta_j` (`j < M-1`): gradient and
    /// Hessian, as `(grad[j], hess[i][j])`.
    pub fn log_weight_derivs(&self, x: &[f64], k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let m = self.components;
        let c = self.free_mass();
        let p = self.softmax(x);
        let a = self.a_min + c * p[k];
        let e = m - 1;
        let delta = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
        let da: Vec<f64> = (0..e).map(|j| c * p[k] * (delta(k, j) - p[j])).collect();
        let mut h = vec![vec![0.0; e]; e];
        for i in 0..e {
            for j in 0..e {
                let d2a = c * (p[k] * (delta(k, i) - p[i]) * (delta(k, j) - p[j]) - p[k] * p[j] * (delta(j, i) - p[i]));
                h[i][j] = d2a / a - da[i] * da[j] / (a * a);
            }
        }
        (da.iter().map(|d| d / a).collect(), h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let chart = Chart::new(3, 0.02);
        let theta = MixtureParams::new(vec![0.2, 0.5, 0.3], vec![-1.0, 0.0, 2.0], vec![0.3, 1.0, 2.0]);
        let x = chart.from_params(&theta);
        let back = chart.to_params(&x);
        for (a, b) in theta.to_vec().iter().zip(back.to_vec()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn log_weight_derivs_match_finite_differences() {
        let chart = Chart::new(3, 0.05);
        let x = vec![0.3, -0.7, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let h = 1e-5;
        for k in 0..3 {
            let (g, hs) = chart.log_weight_derivs(&x, k);
            for j in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (chart.to_params(&xp).weights[k].ln() - chart.to_params(&xm).weights[k].ln()) / (2.0 * h);
                assert!((fd - g[j]).abs() < 1e-8);
                let (gp, _) = chart.log_weight_derivs(&xp, k);
                let (gm, _) = chart.log_weight_derivs(&xm, k);
                for i in 0..2 {
                    assert!(((gp[i] - gm[i]) / (2.0 * h) - hs[i][j]).abs() < 1e-7);
                }
            }
        }
    }
}
