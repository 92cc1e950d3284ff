#![allow(dead_code)]

pub mod quadrature;

use mixfx::simulate::simulate_stats_cohort;
use mixfx::{MixtureParams, SdeModel, SubjectDesign, SuffStats};

pub const DT: f64 = 1e-3;

pub fn theta_two() -> MixtureParams {
    MixtureParams::new(vec![0.4, 0.6], vec![-1.0, 2.0], vec![0.25, 0.5])
}

pub fn design() -> SubjectDesign {
    SubjectDesign::new(1.0, 1.0)
}

pub fn ou_stats(theta: &MixtureParams, n: usize, seed: u64) -> Vec<SuffStats> {
    ou_stats_dt(theta, n, seed, DT)
}

pub fn ou_stats_dt(theta: &MixtureParams, n: usize, seed: u64, dt: f64) -> Vec<SuffStats> {
    simulate_stats_cohort(&SdeModel::linear(), theta, &vec![design(); n], dt, seed).unwrap().stats
}

pub fn ou_stats_x0(theta: &MixtureParams, n: usize, seed: u64, x0: f64) -> Vec<SuffStats> {
    simulate_stats_cohort(&SdeModel::linear(), theta, &vec![SubjectDesign::new(x0, 1.0); n], DT, seed).unwrap().stats
}
