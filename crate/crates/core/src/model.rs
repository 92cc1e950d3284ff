//! Domain types: the drift/diffusion catalogue, mixture parameters on the
//! compact parameter space, subject designs, and label-switching utilities.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the simplex constraint `sum(a) = 1`.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Drift `b(x)` and diffusion `sigma(x)` of `dX = phi b(X) dt + sigma(X) dW`.
///
/// Catalogue models are constructed by name; custom models are available to
/// library users and tests but are not reachable from config files.
#[derive(Clone, Debug)]
pub struct SdeModel {
    pub name: String,
    drift: fn(f64) -> f64,
    diffusion: fn(f64) -> f64,
    /// Multiplier applied to `diffusion`. Catalogue configs require it > 0.
    pub noise_scale: f64,
    /// Growth exponent in `b^2/sigma^2 <= K (1 + |x|^tau)`.
    pub tau: f64,
}

fn linear_drift(x: f64) -> f64 {
    x
}
fn unit(_: f64) -> f64 {
    1.0
}
fn damped_drift(x: f64) -> f64 {
    x / (1.0 + x * x)
}

pub const CATALOGUE: &[&str] = &["linear", "constant", "damped"];

impl SdeModel {
    pub fn custom(name: impl Into<String>, drift: fn(f64) -> f64, diffusion: fn(f64) -> f64, tau: f64) -> Self {
        Self { name: name.into(), drift, diffusion, noise_scale: 1.0, tau }
    }

    /// `b(x) = x`, `sigma = 1`: the Ornstein-Uhlenbeck family.
    pub fn linear() -> Self {
        Self::custom("linear", linear_drift, unit, 2.0)
    }

    /// `b(x) = 1`, `sigma = 1`. The growth exponent is 0, reported as 1.
    pub fn constant() -> Self {
        Self::custom("constant", unit, unit, 1.0)
    }

    /// `b(x) = x / (1 + x^2)`, `sigma = 1`.
    pub fn damped() -> Self {
        Self::custom("damped", damped_drift, unit, 1.0)
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "linear" | "ou" => Some(Self::linear()),
            "constant" => Some(Self::constant()),
            "damped" => Some(Self::damped()),
            _ => None,
        }
    }

    pub fn with_noise_scale(mut self, scale: f64) -> Self {
        self.noise_scale = scale;
        self
    }

    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    #[inline]
    pub fn diffusion(&self, x: f64) -> f64 {
        self.noise_scale * (self.diffusion)(x)
    }

    /// Checks `b^2/sigma^2 <= K (1 + |x|^tau)` on a uniform grid over `range`.
    /// Returns the grid points that fail.
    pub fn growth_violations(&self, k: f64, range: (f64, f64), points: usize) -> Vec<f64> {
        let points = points.max(2);
        let step = (range.1 - range.0) / (points - 1) as f64;
        (0..points)
            .map(|j| range.0 + j as f64 * step)
            .filter(|&x| {
                let b = self.drift(x);
                let s = self.diffusion(x);
                !(s > 0.0 && b * b / (s * s) <= k * (1.0 + x.abs().powf(self.tau)))
            })
            .collect()
    }
}

/// Mixture parameters `theta = (a_1..a_M, mu_1..mu_M, omega2_1..omega2_M)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub mu: Vec<f64>,
    pub omega2: Vec<f64>,
}

impl MixtureParams {
    pub fn new(weights: Vec<f64>, mu: Vec<f64>, omega2: Vec<f64>) -> Self {
        Self { weights, mu, omega2 }
    }

    /// A single normal component `N(mu, omega2)`.
    pub fn single(mu: f64, omega2: f64) -> Self {
        Self::new(vec![1.0], vec![mu], vec![omega2])
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// Stacked natural coordinates `(a, mu, omega2)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.components());
        v.extend_from_slice(&self.weights);
        v.extend_from_slice(&self.mu);
        v.extend_from_slice(&self.omega2);
        v
    }

    pub fn from_vec(v: &[f64]) -> Self {
        let m = v.len() / 3;
        Self::new(v[..m].to_vec(), v[m..2 * m].to_vec(), v[2 * m..].to_vec())
    }

    /// Applies the label permutation `perm`: component `k` of the result is
    /// component `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::new(
            perm.iter().map(|&k| self.weights[k]).collect(),
            perm.iter().map(|&k| self.mu[k]).collect(),
            perm.iter().map(|&k| self.omega2[k]).collect(),
        )
    }

    /// Mean of the mixture distribution of the random effect.
    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.mu).map(|(a, m)| a * m).sum()
    }

    /// Variance of the mixture distribution of the random effect.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.weights
            .iter()
            .zip(self.mu.iter().zip(&self.omega2))
            .map(|(a, (m, w))| a * (w + (m - mean) * (m - mean)))
            .sum()
    }
}

/// Compact parameter space: weights bounded below by `a_min`, means and
/// variances in closed intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBox {
    #[serde(default = "default_a_min")]
    pub a_min: f64,
    pub mu: [f64; 2],
    pub omega2: [f64; 2],
}

fn default_a_min() -> f64 {
    0.01
}

impl Default for ParamBox {
    fn default() -> Self {
        Self { a_min: 0.01, mu: [-5.0, 5.0], omega2: [0.01, 10.0] }
    }
}

impl ParamBox {
    /// Largest `|mu|` on the box.
    pub fn mu_abs_max(&self) -> f64 {
        self.mu[0].abs().max(self.mu[1].abs())
    }

    /// Checks the box itself for `m` components.
    pub fn check(&self, m: usize) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.mu[0] < self.mu[1]) {
            out.push(Violation::new(ViolationKind::DegenerateBox, None, "mu interval"));
        }
        if !(self.omega2[0] > 0.0 && self.omega2[0] < self.omega2[1]) {
            out.push(Violation::new(ViolationKind::DegenerateBox, None, "omega2 interval must satisfy 0 < lo < hi"));
        }
        if !(self.a_min > 0.0 && self.a_min * (m as f64) < 1.0) {
            out.push(Violation::new(ViolationKind::DegenerateBox, None, "a_min must satisfy 0 < a_min * M < 1"));
        }
        out
    }

    pub fn contains(&self, theta: &MixtureParams) -> bool {
        validate_params(theta, self).is_empty()
    }

    /// True when any coordinate sits on the box boundary (within `tol`).
    pub fn on_boundary(&self, theta: &MixtureParams, tol: f64) -> bool {
        let m = theta.components();
        let hits = |x: f64, lo: f64, hi: f64| (x - lo).abs() <= tol || (hi - x).abs() <= tol;
        (0..m).any(|k| {
            (m > 1 && (theta.weights[k] - self.a_min).abs() <= tol)
                || hits(theta.mu[k], self.mu[0], self.mu[1])
                || hits(theta.omega2[k], self.omega2[0], self.omega2[1])
        })
    }

    /// Projects `theta` into the box (weights via [`project_weights`]).
    pub fn clamp(&self, theta: &MixtureParams) -> MixtureParams {
        MixtureParams::new(
            project_weights(&theta.weights, self.a_min),
            theta.mu.iter().map(|m| m.clamp(self.mu[0], self.mu[1])).collect(),
            theta.omega2.iter().map(|w| w.clamp(self.omega2[0], self.omega2[1])).collect(),
        )
    }
}

/// Maximizes `sum_k c_k log a_k` over `{a : a_k >= a_min, sum a = 1}` when
/// `counts` are nonnegative pseudo-counts. Used both as the constrained
/// weight M-step and as a projection of arbitrary weights into the interior
/// simplex.
pub fn project_weights(counts: &[f64], a_min: f64) -> Vec<f64> {
    let m = counts.len();
    let c: Vec<f64> = counts.iter().map(|x| x.max(0.0)).collect();
    let total: f64 = c.iter().sum();
    if total <= 0.0 {
        return vec![1.0 / m as f64; m];
    }
    // a_k = max(a_min, c_k / lambda); find lambda with sum = 1 by fixed-point on the free set.
    let mut clamped = vec![false; m];
    loop {
        let free_mass: f64 = (0..m).filter(|&k| !clamped[k]).map(|k| c[k]).sum();
        let n_clamped = clamped.iter().filter(|&&b| b).count() as f64;
        let budget = 1.0 - a_min * n_clamped;
        let mut changed = false;
        for k in 0..m {
            if !clamped[k] && (free_mass <= 0.0 || c[k] * budget / free_mass < a_min) {
                clamped[k] = true;
                changed = true;
            }
        }
        if !changed {
            return (0..m).map(|k| if clamped[k] { a_min } else { c[k] * budget / free_mass }).collect();
        }
    }
}

/// Initial value and horizon of one subject.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectDesign {
    pub x0: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

impl SubjectDesign {
    pub fn new(x0: f64, horizon: f64) -> Self {
        Self { x0, horizon }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    LengthMismatch,
    NonFinite,
    WeightBelowMin,
    WeightsSum,
    MuOutOfBox,
    Omega2BelowBox,
    Omega2AboveBox,
    DegenerateBox,
}

/// One broken invariant of a parameter point, with the offending component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub component: Option<usize>,
    pub detail: String,
}

impl Violation {
    fn new(kind: ViolationKind, component: Option<usize>, detail: impl Into<String>) -> Self {
        Self { kind, component, detail: detail.into() }
    }

    /// JSON pointer of the offending field relative to a serialized
    /// [`MixtureParams`] (e.g. `/omega2/0`).
    pub fn pointer(&self) -> String {
        let field = match self.kind {
            ViolationKind::WeightBelowMin | ViolationKind::WeightsSum => "weights",
            ViolationKind::MuOutOfBox => "mu",
            ViolationKind::Omega2BelowBox | ViolationKind::Omega2AboveBox => "omega2",
            _ => "",
        };
        match (field, self.component) {
            ("", _) => String::new(),
            (f, Some(k)) => format!("/{f}/{k}"),
            (f, None) => format!("/{f}"),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.component {
            Some(k) => write!(f, "{:?} (component {k}): {}", self.kind, self.detail),
            None => write!(f, "{:?}: {}", self.kind, self.detail),
        }
    }
}

/// Lists every invariant violated by `theta` on the box; empty means valid.
pub fn validate_params(theta: &MixtureParams, bx: &ParamBox) -> Vec<Violation> {
    use ViolationKind::*;
    let m = theta.weights.len();
    let mut out = bx.check(m);
    if m == 0 || theta.mu.len() != m || theta.omega2.len() != m {
        out.push(Violation::new(
            LengthMismatch,
            None,
            format!("weights/mu/omega2 lengths {}/{}/{}", m, theta.mu.len(), theta.omega2.len()),
        ));
        return out;
    }
    for k in 0..m {
        let (a, mu, w) = (theta.weights[k], theta.mu[k], theta.omega2[k]);
        if !(a.is_finite() && mu.is_finite() && w.is_finite()) {
            out.push(Violation::new(NonFinite, Some(k), "non-finite coordinate"));
            continue;
        }
        if a < bx.a_min {
            out.push(Violation::new(WeightBelowMin, Some(k), format!("weight {a} below a_min {}", bx.a_min)));
        }
        if mu < bx.mu[0] || mu > bx.mu[1] {
            out.push(Violation::new(MuOutOfBox, Some(k), format!("mu {mu} outside [{}, {}]", bx.mu[0], bx.mu[1])));
        }
        if w < bx.omega2[0] {
            out.push(Violation::new(Omega2BelowBox, Some(k), format!("omega2 {w} below box {}", bx.omega2[0])));
        }
        if w > bx.omega2[1] {
            out.push(Violation::new(Omega2AboveBox, Some(k), format!("omega2 {w} above box {}", bx.omega2[1])));
        }
    }
    let sum: f64 = theta.weights.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        out.push(Violation::new(WeightsSum, None, format!("weights sum {sum} != 1")));
    }
    out
}

/// Returns `Err(InvalidParams)` unless `theta` is valid on `bx`.
pub fn ensure_valid(theta: &MixtureParams, bx: &ParamBox) -> Result<()> {
    let v = validate_params(theta, bx);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidParams(v))
    }
}

/// Sorts components by ascending `mu`, then `omega2`, then weight.
pub fn canonicalize_labels(theta: &MixtureParams) -> MixtureParams {
    let mut order: Vec<usize> = (0..theta.components()).collect();
    order.sort_by(|&i, &j| {
        theta.mu[i]
            .total_cmp(&theta.mu[j])
            .then(theta.omega2[i].total_cmp(&theta.omega2[j]))
            .then(theta.weights[i].total_cmp(&theta.weights[j]))
    });
    theta.permuted(&order)
}

/// Calls `visit` with every permutation of `0..m`.
pub fn for_each_permutation(m: usize, mut visit: impl FnMut(&[usize])) {
    fn heap(k: usize, perm: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if k <= 1 {
            visit(perm);
            return;
        }
        for i in 0..k {
            heap(k - 1, perm, visit);
            if k.is_multiple_of(2) {
                perm.swap(i, k - 1);
            } else {
                perm.swap(0, k - 1);
            }
        }
    }
    let mut perm: Vec<usize> = (0..m).collect();
    heap(m, &mut perm, &mut visit);
}

/// The label permutation of `theta` closest (Euclidean, stacked natural
/// coordinates) to `target`, and that distance.
pub fn best_permutation(theta: &MixtureParams, target: &MixtureParams) -> Result<(Vec<usize>, f64)> {
    let m = theta.components();
    if m != target.components() {
        return Err(Error::ComponentMismatch { left: m, right: target.components() });
    }
    let mut best = (Vec::new(), f64::INFINITY);
    for_each_permutation(m, |perm| {
        let d2: f64 = perm
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let da = theta.weights[p] - target.weights[k];
                let dm = theta.mu[p] - target.mu[k];
                let dw = theta.omega2[p] - target.omega2[k];
                da * da + dm * dm + dw * dw
            })
            .sum();
        if d2 < best.1 {
            best = (perm.to_vec(), d2);
        }
    });
    Ok((best.0, best.1.sqrt()))
}

/// Minimum over label permutations of the Euclidean distance between the
/// stacked parameter vectors.
pub fn permutation_distance(a: &MixtureParams, b: &MixtureParams) -> Result<f64> {
    best_permutation(a, b).map(|(_, d)| d)
}

/// Relabels `theta` to best match `target`.
pub fn match_labels(theta: &MixtureParams, target: &MixtureParams) -> Result<MixtureParams> {
    let (perm, _) = best_permutation(theta, target)?;
    Ok(theta.permuted(&perm))
}
