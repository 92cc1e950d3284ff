//! Vector-valued random effects: `dX = phi^T b(X) dt + sigma(X) dW` with
//! `phi` drawn from a mixture of `d`-variate normals. Likelihood evaluation
//! and simulation only.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SubjectDesign, SIMPLEX_TOL};
use crate::simulate::{check_step, time_grid, Path, SubjectRng, DIVERGENCE_BOUND};

/// Smallest eigenvalue `V` may have.
pub const PD_TOL: f64 = 1e-10;
/// Largest condition number accepted for `I + V Sigma`.
pub const MAX_CONDITION: f64 = 1e12;
/// Asymmetry of `(I + V Sigma)^{-1} V` above which evaluations are flagged.
pub const ASYMMETRY_FLAG: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VecSuffStats {
    pub u: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl VecSuffStats {
    pub fn new(u: DVector<f64>, v: DMatrix<f64>) -> Self {
        Self { u, v }
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// Checks shape, symmetry of `V` (to 1e-10) and positive definiteness.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.v.nrows() != d || self.v.ncols() != d {
            return Err(Error::Precondition(format!("V is {}x{}, U has length {d}", self.v.nrows(), self.v.ncols())));
        }
        if (&self.v - self.v.transpose()).amax() > 1e-10 {
            return Err(Error::Precondition("V is not symmetric".into()));
        }
        let min = self.v.clone().symmetric_eigen().eigenvalues.min();
        if !(min > PD_TOL) {
            return Err(Error::Precondition(format!("V is not positive definite (min eigenvalue {min})")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvMixtureParams {
    pub weights: Vec<f64>,
    pub mu: Vec<DVector<f64>>,
    pub sigma: Vec<DMatrix<f64>>,
}

impl MvMixtureParams {
    pub fn new(weights: Vec<f64>, mu: Vec<DVector<f64>>, sigma: Vec<DMatrix<f64>>) -> Self {
        Self { weights, mu, sigma }
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.mu.first().map_or(0, |m| m.len())
    }

    /// Simplex with floor `a_min`, symmetric covariances with eigenvalues in
    /// `eig`, consistent dimensions.
    pub fn validate(&self, a_min: f64, eig: [f64; 2]) -> Result<()> {
        let m = self.components();
        let d = self.dim();
        if m == 0 || self.mu.len() != m || self.sigma.len() != m {
            return Err(Error::Precondition("inconsistent component counts".into()));
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL || self.weights.iter().any(|a| *a < a_min) {
            return Err(Error::Precondition("weights are off the floored simplex".into()));
        }
        for k in 0..m {
            let s = &self.sigma[k];
            if self.mu[k].len() != d || s.nrows() != d || s.ncols() != d {
                return Err(Error::Precondition(format!("component {k} has the wrong dimension")));
            }
            if (s - s.transpose()).amax() > 1e-12 {
                return Err(Error::Precondition(format!("Sigma_{k} is not symmetric")));
            }
            let ev = s.clone().symmetric_eigen().eigenvalues;
            if ev.min() < eig[0] || ev.max() > eig[1] {
                return Err(Error::Precondition(format!("Sigma_{k} eigenvalues outside [{}, {}]", eig[0], eig[1])));
            }
        }
        Ok(())
    }
}

/// `log f` with the asymmetry of `(I + V Sigma)^{-1} V` before symmetrizing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiEval {
    pub value: f64,
    pub asymmetry: f64,
    pub flagged: bool,
}

/// Which determinant is used for the `log det` term; they agree in exact
/// arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetForm {
    /// `det(I + V Sigma)`
    VSigma,
    /// `det(I + Sigma V)`
    SigmaV,
}

/// `log f(X | mu, Sigma) = -log det(I + V Sigma)/2
///  - (mu - V^{-1}U)^T R^{-1} (mu - V^{-1}U)/2 + U^T V^{-1} U / 2`
/// with `R^{-1} = (I + V Sigma)^{-1} V`.
pub fn log_f_multi_detailed(
    s: &VecSuffStats,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    form: DetForm,
) -> Result<MultiEval> {
    let d = s.dim();
    if mu.len() != d || sigma.nrows() != d || sigma.ncols() != d {
        return Err(Error::Precondition("dimension mismatch between statistics and parameters".into()));
    }
    let chol = s.v.clone().cholesky().ok_or_else(|| Error::Precondition("V is not positive definite".into()))?;
    let eye = DMatrix::<f64>::identity(d, d);
    let a = &eye + &s.v * sigma;
    let sv = a.clone().singular_values();
    let cond = sv.max() / sv.min();
    if !(cond <= MAX_CONDITION) {
        return Err(Error::LinAlg(format!("I + V Sigma is ill-conditioned (condition {cond:e})")));
    }
    let lu = a.clone().lu();
    let r_inv = lu.solve(&s.v).ok_or_else(|| Error::LinAlg("I + V Sigma is singular".into()))?;
    let asymmetry = (&r_inv - r_inv.transpose()).amax() / r_inv.amax().max(f64::MIN_POSITIVE);
    let r_inv = (&r_inv + r_inv.transpose()) * 0.5;
    let log_det = match form {
        DetForm::VSigma => lu.determinant().ln(),
        DetForm::SigmaV => (&eye + sigma * &s.v).lu().determinant().ln(),
    };
    let vinv_u = chol.solve(&s.u);
    let e = mu - &vinv_u;
    let value = -0.5 * log_det - 0.5 * e.dot(&(&r_inv * &e)) + 0.5 * s.u.dot(&vinv_u);
    Ok(MultiEval { value, asymmetry, flagged: asymmetry > ASYMMETRY_FLAG })
}

pub fn log_f_multi(s: &VecSuffStats, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    Ok(log_f_multi_detailed(s, mu, sigma, DetForm::VSigma)?.value)
}

/// `log sum_k a_k f(X | mu_k, Sigma_k)`, summed in sorted order.
pub fn log_lambda_multi(s: &VecSuffStats, theta: &MvMixtureParams) -> Result<f64> {
    let mut terms = (0..theta.components())
        .map(|k| Ok(theta.weights[k].ln() + log_f_multi(s, &theta.mu[k], &theta.sigma[k])?))
        .collect::<Result<Vec<f64>>>()?;
    terms.sort_unstable_by(f64::total_cmp);
    let max = terms[terms.len() - 1];
    if max == f64::NEG_INFINITY {
        return Ok(max);
    }
    Ok(max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln())
}

/// Scalar diffusion with a `d`-vector of drift functions.
#[derive(Clone, Debug)]
pub struct VecSdeModel {
    pub name: String,
    pub dim: usize,
    drift: fn(f64, &mut [f64]),
    diffusion: fn(f64) -> f64,
}

fn affine_drift(x: f64, out: &mut [f64]) {
    out[0] = x;
    out[1] = 1.0;
}

fn unit_sigma(_: f64) -> f64 {
    1.0
}

impl VecSdeModel {
    pub fn custom(name: impl Into<String>, dim: usize, drift: fn(f64, &mut [f64]), diffusion: fn(f64) -> f64) -> Self {
        Self { name: name.into(), dim, drift, diffusion }
    }

    /// `b(x) = (x, 1)`, `sigma = 1`.
    pub fn affine() -> Self {
        Self::custom("affine", 2, affine_drift, unit_sigma)
    }

    pub fn drift(&self, x: f64, out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn diffusion(&self, x: f64) -> f64 {
        (self.diffusion)(x)
    }
}

/// `U = sum b/sigma^2 dX` and `V = sum b b^T / sigma^2 dt` on the path grid,
/// left-point rule, `V` symmetrized.
pub fn compute_vec_suffstats(path: &Path, model: &VecSdeModel) -> Result<VecSuffStats> {
    let d = model.dim;
    let mut u = DVector::zeros(d);
    let mut v = DMatrix::zeros(d, d);
    let mut b = vec![0.0; d];
    for j in 0..path.steps() {
        let x = path.values[j];
        let s = model.diffusion(x);
        if s == 0.0 {
            return Err(Error::DegenerateDiffusion { node: j });
        }
        model.drift(x, &mut b);
        let s2 = s * s;
        let dx = path.values[j + 1] - x;
        let h = path.times[j + 1] - path.times[j];
        for p in 0..d {
            u[p] += b[p] / s2 * dx;
            for q in 0..d {
                v[(p, q)] += b[p] * b[q] / s2 * h;
            }
        }
    }
    let v = (&v + v.transpose()) * 0.5;
    Ok(VecSuffStats { u, v })
}

/// Draws `phi` from the mixture; returns the effect and its 0-based label.
pub fn sample_vec_effect(theta: &MvMixtureParams, rng: &mut SubjectRng) -> Result<(DVector<f64>, usize)> {
    let u = rng.uniform();
    let mut acc = 0.0;
    let mut z = theta.components() - 1;
    for (k, a) in theta.weights.iter().enumerate() {
        acc += a;
        if u < acc {
            z = k;
            break;
        }
    }
    // symmetric square root tolerates singular covariances
    let eig = theta.sigma[z].clone().symmetric_eigen();
    let root = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()))
        * eig.eigenvectors.transpose();
    let d = theta.dim();
    let g = DVector::from_fn(d, |_, _| rng.standard_normal());
    Ok((&theta.mu[z] + root * g, z))
}

/// Euler path for the effect `phi` on the design grid.
pub fn simulate_vec_path(
    model: &VecSdeModel,
    phi: &DVector<f64>,
    design: &SubjectDesign,
    dt: f64,
    rng: &mut SubjectRng,
) -> Result<Path> {
    check_step(design, dt)?;
    let times = time_grid(design.horizon, dt);
    let mut values = Vec::with_capacity(times.len());
    values.push(design.x0);
    let mut b = vec![0.0; model.dim];
    for j in 0..times.len() - 1 {
        let x = values[j];
        let h = times[j + 1] - times[j];
        let dw = h.sqrt() * rng.standard_normal();
        model.drift(x, &mut b);
        let drift: f64 = b.iter().zip(phi.iter()).map(|(bi, p)| bi * p).sum();
        let next = x + drift * h + model.diffusion(x) * dw;
        if !(next.abs() <= DIVERGENCE_BOUND) {
            return Err(Error::SimulationDiverged { step: j + 1, value: next });
        }
        values.push(next);
    }
    Ok(Path { times, values, dt, seed: rng.seed, stream: rng.stream })
}

/// Simulates one subject: effect, path and statistics.
pub fn simulate_multi(
    model: &VecSdeModel,
    theta: &MvMixtureParams,
    design: &SubjectDesign,
    dt: f64,
    rng: &mut SubjectRng,
) -> Result<(DVector<f64>, Path, VecSuffStats)> {
    if theta.dim() != model.dim {
        return Err(Error::Precondition(format!(
            "model has {} drift functions, parameters have dimension {}",
            model.dim,
            theta.dim()
        )));
    }
    let (phi, _) = sample_vec_effect(theta, rng)?;
    let path = simulate_vec_path(model, &phi, design, dt, rng)?;
    let stats = compute_vec_suffstats(&path, model)?;
    Ok((phi, path, stats))
}
