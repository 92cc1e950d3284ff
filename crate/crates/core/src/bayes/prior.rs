use serde::{Deserialize, Serialize};

use crate::model::{validate_params, MixtureParams, ParamBox};
use crate::stats::normal_cdf;

/// Prior on the box, normalized over it. Weights are uniform on the floored
/// simplex under both kinds; the truncated-normal kind puts independent
/// normals, truncated to the box, on every `mu_k` and every `omega2_k`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    #[default]
    Uniform,
    TruncatedNormal {
        mu_mean: f64,
        mu_sd: f64,
        omega2_mean: f64,
        omega2_sd: f64,
    },
}

fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

fn log_truncnorm(x: f64, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let z = (x - mean) / sd;
    let mass = normal_cdf((hi - mean) / sd) - normal_cdf((lo - mean) / sd);
    -0.5 * z * z - (sd * (2.0 * std::f64::consts::PI).sqrt()).ln() - mass.ln()
}

impl PriorSpec {
    /// Log density w.r.t. Lebesgue measure on `(a_1..a_{M-1}, mu, omega2)`;
    /// `-inf` outside the box.
    pub fn log_density(&self, theta: &MixtureParams, bx: &ParamBox) -> f64 {
        if !validate_params(theta, bx).is_empty() {
            return f64::NEG_INFINITY;
        }
        let m = theta.components();
        let free = 1.0 - m as f64 * bx.a_min;
        // uniform on the floored simplex: volume free^(M-1) / (M-1)!
        let weights = ln_factorial(m - 1) - (m as f64 - 1.0) * free.ln();
        match self {
            PriorSpec::Uniform => {
                weights - m as f64 * ((bx.mu[1] - bx.mu[0]).ln() + (bx.omega2[1] - bx.omega2[0]).ln())
            }
            PriorSpec::TruncatedNormal { mu_mean, mu_sd, omega2_mean, omega2_sd } => {
                let mut lp = weights;
                for k in 0..m {
                    lp += log_truncnorm(theta.mu[k], *mu_mean, *mu_sd, bx.mu[0], bx.mu[1]);
                    lp += log_truncnorm(theta.omega2[k], *omega2_mean, *omega2_sd, bx.omega2[0], bx.omega2[1]);
                }
                lp
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            PriorSpec::Uniform => Ok(()),
            PriorSpec::TruncatedNormal { mu_sd, omega2_sd, .. } => {
                if *mu_sd > 0.0 && *omega2_sd > 0.0 {
                    Ok(())
                } else {
                    Err("prior standard deviations must be positive".into())
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_one_component_density_is_inverse_box_volume() {
        let bx = ParamBox::default();
        let lp = PriorSpec::Uniform.log_density(&MixtureParams::single(0.0, 1.0), &bx);
        assert!((lp + (10.0f64 * 9.99).ln()).abs() < 1e-12);
    }

    #[test]
    fn truncated_normal_integrates_to_one_on_the_box() {
        let bx = ParamBox::default();
        let prior = PriorSpec::TruncatedNormal { mu_mean: 1.0, mu_sd: 2.0, omega2_mean: 0.5, omega2_sd: 1.0 };
        // midpoint rule on a grid over (mu, omega2)
        let (nm, nw) = (800, 800);
        let hm = (bx.mu[1] - bx.mu[0]) / nm as f64;
        let hw = (bx.omega2[1] - bx.omega2[0]) / nw as f64;
        let mut total = 0.0;
        for i in 0..nm {
            for j in 0..nw {
                let t = MixtureParams::single(bx.mu[0] + (i as f64 + 0.5) * hm, bx.omega2[0] + (j as f64 + 0.5) * hw);
                total += prior.log_density(&t, &bx).exp() * hm * hw;
            }
        }
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn outside_the_box_is_impossible() {
        let bx = ParamBox::default();
        assert_eq!(PriorSpec::Uniform.log_density(&MixtureParams::single(6.0, 1.0), &bx), f64::NEG_INFINITY);
    }
}
