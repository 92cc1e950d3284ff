//! Adaptive random-walk Metropolis in the chart. Adaptation runs during
//! burn-in only; the kernel is fixed afterwards.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::PriorSpec;
use crate::chart::Chart;
use crate::error::{Error, Result};
use crate::likelihood::{log_lambda_unchecked, total_loglik};
use crate::model::{MixtureParams, ParamBox};
use crate::simulate::SubjectRng;
use crate::suffstats::SuffStats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcOptions {
    /// Total iterations `S`, burn-in included.
    pub draws: usize,
    /// Defaults to 20% of `draws`.
    pub burn_in: Option<usize>,
    pub seed: u64,
    pub target_accept: f64,
    /// With `false` the chain targets the prior alone.
    pub use_likelihood: bool,
}

impl Default for McmcOptions {
    fn default() -> Self {
        Self { draws: 50_000, burn_in: None, seed: 0, target_accept: 0.234, use_likelihood: true }
    }
}

impl McmcOptions {
    pub fn burn(&self) -> usize {
        self.burn_in.unwrap_or(self.draws / 5)
    }
}

#[derive(Clone, Debug)]
pub struct Chain {
    pub chart: Chart,
    /// Every iterate in chart coordinates, burn-in included, raw labels.
    pub draws: Vec<Vec<f64>>,
    pub log_post: Vec<f64>,
    pub burn_in: usize,
    /// Acceptance rate after burn-in.
    pub acceptance_rate: f64,
    pub burn_in_acceptance: f64,
    pub seed: u64,
    /// Frozen proposal scale.
    pub scale: f64,
    pub flags: Vec<String>,
}

impl Chain {
    pub fn post_burn(&self) -> &[Vec<f64>] {
        &self.draws[self.burn_in..]
    }

    pub fn params(&self, i: usize) -> MixtureParams {
        self.chart.to_params(&self.draws[i])
    }

    pub fn post_burn_params(&self) -> Vec<MixtureParams> {
        self.post_burn().iter().map(|x| self.chart.to_params(x)).collect()
    }
}

/// Coordinate names of the chart for `m` components.
pub fn chart_labels(m: usize) -> Vec<String> {
    let mut out: Vec<String> = (1..m).map(|k| format!("eta_{k}")).collect();
    out.extend((1..=m).map(|k| format!("mu_{k}")));
    out.extend((1..=m).map(|k| format!("log_omega2_{k}")));
    out
}

struct Target<'a> {
    stats: &'a [SuffStats],
    prior: &'a PriorSpec,
    bx: &'a ParamBox,
    chart: Chart,
    use_likelihood: bool,
}

impl Target<'_> {
    fn log_density(&self, x: &[f64]) -> f64 {
        let theta = self.chart.to_params(x);
        let lp = self.prior.log_density(&theta, self.bx);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        let mut ll = 0.0;
        if self.use_likelihood {
            for s in self.stats {
                ll += log_lambda_unchecked(s.u, s.v, &theta);
            }
        }
        let out = lp + self.chart.log_jacobian(x) + ll;
        if out.is_nan() {
            f64::NEG_INFINITY
        } else {
            out
        }
    }
}

/// Random-walk Metropolis on the posterior of an `m`-component mixture,
/// started at `init`. Proposals are `x + e^g L diag(s) z`, where `L` is the
/// Cholesky factor of `proposal_cov` (identity if absent), `g` follows a
/// Robbins-Monro recursion toward `target_accept`, and `s` tracks the
/// running standard deviations of the whitened chain. Both freeze at the end
/// of burn-in.
pub fn mh_sample(
    stats: &[SuffStats],
    prior: &PriorSpec,
    bx: &ParamBox,
    init: &MixtureParams,
    proposal_cov: Option<&DMatrix<f64>>,
    opts: &McmcOptions,
) -> Result<Chain> {
    if opts.draws < 1000 {
        return Err(Error::Precondition(format!("need at least 1000 draws, got {}", opts.draws)));
    }
    let burn = opts.burn();
    if burn >= opts.draws {
        return Err(Error::Precondition("burn-in must be shorter than the chain".into()));
    }
    if !(opts.target_accept > 0.0 && opts.target_accept < 1.0) {
        return Err(Error::Precondition("target acceptance must lie in (0, 1)".into()));
    }
    prior.validate().map_err(Error::Precondition)?;
    if opts.use_likelihood {
        total_loglik(stats, init)?;
    }
    let m = init.components();
    let chart = Chart::new(m, bx.a_min);
    let d = chart.dim();
    let target = Target { stats, prior, bx, chart, use_likelihood: opts.use_likelihood };
    let mut flags = Vec::new();
    let (l, mut s) = match proposal_cov.map(|c| c.clone().cholesky()) {
        Some(Some(ch)) => (ch.l(), vec![1.0; d]),
        Some(None) => {
            flags.push("proposal covariance not positive definite; using identity".into());
            (DMatrix::identity(d, d), vec![0.1; d])
        }
        None => (DMatrix::identity(d, d), vec![0.1; d]),
    };
    let mut x = DVector::from_vec(chart.from_params(init));
    let mut lp = target.log_density(x.as_slice());
    if lp == f64::NEG_INFINITY {
        return Err(Error::Precondition("chain start lies outside the support".into()));
    }
    let mut rng = SubjectRng::new(opts.seed, 0);
    let mut log_scale = (2.38 / (d as f64).sqrt()).ln();
    let whiten = |v: &DVector<f64>| l.solve_lower_triangular(v).unwrap_or_else(|| v.clone());
    let mut w_mean = DVector::<f64>::zeros(d);
    let mut w_m2 = DVector::<f64>::zeros(d);
    let mut w_n = 0.0;
    let mut draws = Vec::with_capacity(opts.draws);
    let mut log_post = Vec::with_capacity(opts.draws);
    let (mut acc_burn, mut acc_main) = (0usize, 0usize);
    let mut z = DVector::<f64>::zeros(d);
    for t in 0..opts.draws {
        for j in 0..d {
            z[j] = s[j] * rng.standard_normal();
        }
        let prop = &x + (&l * &z) * log_scale.exp();
        let lp_prop = target.log_density(prop.as_slice());
        let log_alpha = lp_prop - lp;
        let accept = rng.uniform().ln() < log_alpha;
        if accept {
            x = prop;
            lp = lp_prop;
        }
        if t < burn {
            acc_burn += accept as usize;
            let alpha = if log_alpha >= 0.0 { 1.0 } else { log_alpha.exp() };
            log_scale += (alpha - opts.target_accept) / (t as f64 + 1.0).powf(0.6);
            let y = whiten(&x);
            w_n += 1.0;
            let delta = &y - &w_mean;
            w_mean += &delta / w_n;
            w_m2 += delta.component_mul(&(&y - &w_mean));
            if t >= 200 && t % 100 == 0 {
                for j in 0..d {
                    let sd = (w_m2[j] / (w_n - 1.0)).sqrt();
                    if sd.is_finite() && sd > 1e-8 {
                        s[j] = sd;
                    }
                }
            }
        } else {
            acc_main += accept as usize;
        }
        draws.push(x.as_slice().to_vec());
        log_post.push(lp);
    }
    let acceptance_rate = acc_main as f64 / (opts.draws - burn) as f64;
    if !(0.1..=0.5).contains(&acceptance_rate) {
        flags.push(format!("post burn-in acceptance {acceptance_rate} outside [0.1, 0.5]"));
    }
    Ok(Chain {
        chart,
        draws,
        log_post,
        burn_in: burn,
        acceptance_rate,
        burn_in_acceptance: if burn > 0 { acc_burn as f64 / burn as f64 } else { f64::NAN },
        seed: opts.seed,
        scale: log_scale.exp(),
        flags,
    })
}
