//! Observed and Monte Carlo expected Fisher information in the chart.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::chart::Chart;
use crate::error::{Error, Result};
use crate::likelihood::{grad_hess_loglik, subject_grad_hess, WeightDerivs};
use crate::model::{MixtureParams, ParamBox, SdeModel, SubjectDesign};
use crate::simulate::simulate_stats_cohort;
use crate::suffstats::SuffStats;

/// `-Hessian` of the log-likelihood at `theta`.
pub fn observed_info(stats: &[SuffStats], theta: &MixtureParams, bx: &ParamBox) -> Result<DMatrix<f64>> {
    Ok(-grad_hess_loglik(stats, theta, bx)?.hessian)
}

/// Per-subject averages of `g g^T` and `-H` over simulated subjects.
#[derive(Clone, Debug)]
pub struct InfoEstimate {
    pub score_outer: DMatrix<f64>,
    pub neg_hessian: DMatrix<f64>,
    pub replicates: usize,
}

const CHUNK: usize = 1024;

/// Averages of `g g^T` and `-H` over the given subjects at `theta`.
pub fn info_from_stats(stats: &[SuffStats], theta: &MixtureParams, a_min: f64) -> InfoEstimate {
    let chart = Chart::new(theta.components(), a_min);
    let x = chart.from_params(theta);
    let wd = WeightDerivs::new(&chart, &x);
    let d = chart.dim();
    let partial: Vec<(DMatrix<f64>, DMatrix<f64>)> = stats
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut outer = DMatrix::zeros(d, d);
            let mut hsum = DMatrix::zeros(d, d);
            let mut g = nalgebra::DVector::zeros(d);
            let mut h = DMatrix::zeros(d, d);
            for s in chunk {
                subject_grad_hess(s.u, s.v, theta, &chart, &wd, &mut g, &mut h);
                outer.ger(1.0, &g, &g, 1.0);
                hsum += &h;
            }
            (outer, hsum)
        })
        .collect();
    let mut outer = DMatrix::zeros(d, d);
    let mut hsum = DMatrix::zeros(d, d);
    for (o, h) in partial {
        outer += o;
        hsum += h;
    }
    let r = stats.len() as f64;
    let neg = -(&hsum + hsum.transpose()) * (0.5 / r);
    InfoEstimate { score_outer: outer / r, neg_hessian: neg, replicates: stats.len() }
}

/// Monte Carlo estimate of the per-subject information `E[g g^T]` at
/// `theta` for subjects following `design`, from `r >= 100` simulated
/// subjects.
pub fn expected_info_mc(
    theta: &MixtureParams,
    model: &SdeModel,
    design: &SubjectDesign,
    r: usize,
    dt: f64,
    seed: u64,
    a_min: f64,
) -> Result<InfoEstimate> {
    expected_info_designs(theta, model, std::slice::from_ref(design), r, dt, seed, a_min)
}

/// Average of the per-design information over `designs`, `r` simulated
/// subjects per design.
pub fn expected_info_designs(
    theta: &MixtureParams,
    model: &SdeModel,
    designs: &[SubjectDesign],
    r: usize,
    dt: f64,
    seed: u64,
    a_min: f64,
) -> Result<InfoEstimate> {
    if r < 100 {
        return Err(Error::Precondition(format!("need at least 100 replicates, got {r}")));
    }
    if designs.is_empty() {
        return Err(Error::Precondition("no designs".into()));
    }
    let all: Vec<SubjectDesign> = designs.iter().flat_map(|d| std::iter::repeat_n(*d, r)).collect();
    let sim = simulate_stats_cohort(model, theta, &all, dt, seed)?;
    Ok(info_from_stats(&sim.stats, theta, a_min))
}
