//! Random-effect draws and Euler-Maruyama paths of
//! `dX = phi b(X) dt + sigma(X) dW`.
//!
//! Every subject owns an independent ChaCha8 stream selected by
//! `(master seed, subject index)`, so cohorts are reproducible no matter how
//! the work is scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{MixtureParams, SdeModel, SubjectDesign};
use crate::suffstats::SuffStats;

/// Paths whose state leaves `[-DIVERGENCE_BOUND, DIVERGENCE_BOUND]` abort.
pub const DIVERGENCE_BOUND: f64 = 1e8;

/// Deterministic per-subject random stream.
pub struct SubjectRng {
    pub seed: u64,
    pub stream: u64,
    rng: ChaCha8Rng,
}

impl SubjectRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// One discretized path on `[0, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub dt: f64,
    pub seed: u64,
    pub stream: u64,
}

impl Path {
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }
}

/// Simulated subjects together with the hidden truth used for diagnostics.
#[derive(Clone, Debug)]
pub struct Cohort {
    pub seed: u64,
    pub dt: f64,
    pub paths: Vec<Path>,
    pub effects: Vec<f64>,
    pub designs: Vec<SubjectDesign>,
    /// Zero-based mixture component of each subject.
    pub labels: Vec<usize>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// Draws `z ~ Categorical(a)` then `phi ~ N(mu_z, omega2_z)`.
pub fn sample_random_effect(theta: &MixtureParams, rng: &mut SubjectRng) -> (f64, usize) {
    let u = rng.uniform();
    let m = theta.components();
    let mut acc = 0.0;
    let mut z = m - 1;
    for (k, a) in theta.weights.iter().enumerate() {
        acc += a;
        if u < acc {
            z = k;
            break;
        }
    }
    let phi = theta.mu[z] + theta.omega2[z].sqrt() * rng.standard_normal();
    (phi, z)
}

/// Number of steps and the time grid for horizon `t_end` at step `dt`; the
/// last step is shortened so the grid ends exactly at `t_end`.
pub fn time_grid(t_end: f64, dt: f64) -> Vec<f64> {
    let n = ((t_end / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut times: Vec<f64> = (0..n).map(|j| j as f64 * dt).collect();
    times.push(t_end);
    times
}

/// Rejects non-positive horizons and steps coarser than `T / 100`.
pub fn check_step(design: &SubjectDesign, dt: f64) -> Result<()> {
    if !(design.horizon > 0.0) {
        return Err(Error::Precondition(format!("horizon must be positive, got {}", design.horizon)));
    }
    if !(dt > 0.0 && dt <= design.horizon / 100.0 * (1.0 + 1e-12)) {
        return Err(Error::Precondition(format!("dt = {dt} must lie in (0, T/100] with T = {}", design.horizon)));
    }
    Ok(())
}

/// Euler-Maruyama recursion `X_{j+1} = X_j + phi b(X_j) h_j + sigma(X_j) dW_j`
/// over the given grid and Brownian increments.
pub fn integrate_euler(model: &SdeModel, phi: f64, x0: f64, times: &[f64], increments: &[f64]) -> Result<Vec<f64>> {
    debug_assert_eq!(times.len(), increments.len() + 1);
    let mut values = Vec::with_capacity(times.len());
    let mut x = x0;
    values.push(x);
    for (j, dw) in increments.iter().enumerate() {
        let h = times[j + 1] - times[j];
        x = x + phi * model.drift(x) * h + model.diffusion(x) * dw;
        if !(x.abs() <= DIVERGENCE_BOUND) {
            return Err(Error::SimulationDiverged { step: j + 1, value: x });
        }
        values.push(x);
    }
    Ok(values)
}

/// Simulates one path with effect `phi`.
pub fn simulate_path(
    model: &SdeModel,
    phi: f64,
    design: &SubjectDesign,
    dt: f64,
    rng: &mut SubjectRng,
) -> Result<Path> {
    check_step(design, dt)?;
    let times = time_grid(design.horizon, dt);
    let increments: Vec<f64> = times.windows(2).map(|w| (w[1] - w[0]).sqrt() * rng.standard_normal()).collect();
    let values = integrate_euler(model, phi, design.x0, &times, &increments)?;
    Ok(Path { times, values, dt, seed: rng.seed, stream: rng.stream })
}

/// Simulates one subject and accumulates `(U, V)` on the fly without
/// storing the path. Bit-identical to `simulate_path` followed by
/// `compute_suffstats` with the same stream.
pub fn simulate_subject_stats(
    model: &SdeModel,
    phi: f64,
    design: &SubjectDesign,
    dt: f64,
    rng: &mut SubjectRng,
) -> Result<SuffStats> {
    check_step(design, dt)?;
    let times = time_grid(design.horizon, dt);
    let mut x = design.x0;
    let mut u = 0.0;
    let mut v = 0.0;
    for j in 0..times.len() - 1 {
        let h = times[j + 1] - times[j];
        let dw = h.sqrt() * rng.standard_normal();
        let b = model.drift(x);
        let s = model.diffusion(x);
        let next = x + phi * b * h + s * dw;
        if !(next.abs() <= DIVERGENCE_BOUND) {
            return Err(Error::SimulationDiverged { step: j + 1, value: next });
        }
        if s == 0.0 {
            return Err(Error::DegenerateDiffusion { node: j });
        }
        let s2 = s * s;
        u += b / s2 * (next - x);
        v += b * b / s2 * h;
        x = next;
    }
    Ok(SuffStats::new(u, v, *design))
}

/// Simulates a cohort of `designs.len()` subjects with random effects from
/// `theta`.
pub fn simulate_cohort(
    model: &SdeModel,
    theta: &MixtureParams,
    designs: &[SubjectDesign],
    dt: f64,
    seed: u64,
) -> Result<Cohort> {
    let subjects: Vec<(Path, f64, usize)> = designs
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let mut rng = SubjectRng::new(seed, i as u64);
            let (phi, z) = sample_random_effect(theta, &mut rng);
            simulate_path(model, phi, d, dt, &mut rng).map(|p| (p, phi, z)).map_err(|e| e.for_subject(i))
        })
        .collect::<Result<_>>()?;
    let mut cohort = Cohort {
        seed,
        dt,
        paths: Vec::with_capacity(subjects.len()),
        effects: Vec::with_capacity(subjects.len()),
        designs: designs.to_vec(),
        labels: Vec::with_capacity(subjects.len()),
    };
    for (p, phi, z) in subjects {
        cohort.paths.push(p);
        cohort.effects.push(phi);
        cohort.labels.push(z);
    }
    Ok(cohort)
}

/// Sufficient statistics of a simulated cohort, plus hidden effects and labels.
#[derive(Clone, Debug)]
pub struct StatsCohort {
    pub stats: Vec<SuffStats>,
    pub effects: Vec<f64>,
    pub labels: Vec<usize>,
}

/// Same draws as [`simulate_cohort`] but keeps only `(U, V)` per subject.
pub fn simulate_stats_cohort(
    model: &SdeModel,
    theta: &MixtureParams,
    designs: &[SubjectDesign],
    dt: f64,
    seed: u64,
) -> Result<StatsCohort> {
    let subjects: Vec<(SuffStats, f64, usize)> = designs
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let mut rng = SubjectRng::new(seed, i as u64);
            let (phi, z) = sample_random_effect(theta, &mut rng);
            simulate_subject_stats(model, phi, d, dt, &mut rng).map(|s| (s, phi, z)).map_err(|e| e.for_subject(i))
        })
        .collect::<Result<_>>()?;
    let mut out = StatsCohort {
        stats: Vec::with_capacity(subjects.len()),
        effects: Vec::with_capacity(subjects.len()),
        labels: Vec::with_capacity(subjects.len()),
    };
    for (s, phi, z) in subjects {
        out.stats.push(s);
        out.effects.push(phi);
        out.labels.push(z);
    }
    Ok(out)
}

/// Mixes a master seed with a replicate index into an independent seed.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
