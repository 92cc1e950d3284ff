//! Sufficient statistics `U = int b/sigma^2 dX` (Ito, left point) and
//! `V = int b^2/sigma^2 ds` (left rectangle rule) of a discretized path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SdeModel, SubjectDesign};
use crate::simulate::{Cohort, Path};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuffStats {
    pub u: f64,
    pub v: f64,
    pub design: SubjectDesign,
}

impl SuffStats {
    pub fn new(u: f64, v: f64, design: SubjectDesign) -> Self {
        Self { u, v, design }
    }

    /// Per-subject effect estimate `U/V`.
    pub fn ratio(&self) -> f64 {
        self.u / self.v
    }
}

/// Subjects with `V` below this are degenerate and excluded from inference.
pub const MIN_V: f64 = 1e-12;

pub fn compute_suffstats(path: &Path, model: &SdeModel) -> Result<SuffStats> {
    let mut u = 0.0;
    let mut v = 0.0;
    for j in 0..path.steps() {
        let x = path.values[j];
        let s = model.diffusion(x);
        if s == 0.0 {
            return Err(Error::DegenerateDiffusion { node: j });
        }
        let b = model.drift(x);
        let s2 = s * s;
        u += b / s2 * (path.values[j + 1] - x);
        v += b * b / s2 * (path.times[j + 1] - path.times[j]);
    }
    let design = SubjectDesign::new(path.values[0], *path.times.last().unwrap_or(&0.0));
    Ok(SuffStats::new(u, v, design))
}

/// Elementwise [`compute_suffstats`]; errors carry the subject index.
pub fn batch_suffstats(cohort: &Cohort, model: &SdeModel) -> Result<Vec<SuffStats>> {
    cohort
        .paths
        .iter()
        .zip(&cohort.designs)
        .enumerate()
        .map(|(i, (p, d))| {
            compute_suffstats(p, model)
                .map(|mut s| {
                    s.design = *d;
                    s
                })
                .map_err(|e| e.for_subject(i))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(times: Vec<f64>, values: Vec<f64>) -> Path {
        Path { dt: times[1] - times[0], times, values, seed: 0, stream: 0 }
    }

    #[test]
    fn constant_path_linear_model() {
        let times: Vec<f64> = (0..=200).map(|j| j as f64 * 0.01).collect();
        let p = path(times, vec![1.0; 201]);
        let s = compute_suffstats(&p, &SdeModel::linear()).unwrap();
        assert_eq!(s.u, 0.0);
        assert!((s.v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unit_ramp_constant_model() {
        let times: Vec<f64> = (0..=300).map(|j| j as f64 * 0.01).collect();
        let values: Vec<f64> = times.iter().map(|t| 0.5 + t).collect();
        let s = compute_suffstats(&path(times, values), &SdeModel::constant()).unwrap();
        assert!((s.u - 3.0).abs() < 1e-12);
        assert!((s.v - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_diffusion_is_degenerate() {
        fn zero(_: f64) -> f64 {
            0.0
        }
        fn ident(x: f64) -> f64 {
            x
        }
        let m = SdeModel::custom("z", ident, zero, 2.0);
        let p = path(vec![0.0, 0.1, 0.2], vec![1.0, 1.1, 1.2]);
        assert!(matches!(compute_suffstats(&p, &m), Err(Error::DegenerateDiffusion { node: 0 })));
    }

    #[test]
    fn left_point_differs_from_right_point_for_state_dependent_sigma() {
        fn sig(x: f64) -> f64 {
            1.0 + x * x
        }
        fn ident(x: f64) -> f64 {
            x
        }
        let m = SdeModel::custom("ns", ident, sig, 2.0);
        let times: Vec<f64> = (0..=4).map(|j| j as f64 * 0.25).collect();
        let values = vec![0.0, 0.5, 1.5, 0.5, 2.0];
        let p = path(times, values.clone());
        let left = compute_suffstats(&p, &m).unwrap().u;
        let right: f64 = (0..4)
            .map(|j| {
                let x = values[j + 1];
                x / (sig(x) * sig(x)) * (values[j + 1] - values[j])
            })
            .sum();
        assert!((left - right).abs() > 1e-3);
    }
}
