//! Monte Carlo experiments on the large-sample behaviour of the estimators:
//! consistency, normality of the MLE, posterior concentration and
//! normality, and convergence of design-averaged information and
//! Kullback-Leibler divergences for non-identical designs.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{mh_sample, posterior_normality_report, psi_transform, McmcOptions, NormalityThresholds, PriorSpec};
use crate::chart::Chart;
use crate::error::{Error, Result};
use crate::likelihood::log_lambda_unchecked;
use crate::mle::{
    direct_fit, expected_info_designs, info_from_stats, moment_init, multistart_fit, FitResult, Tolerances,
};
use crate::model::{
    match_labels, permutation_distance, validate_params, MixtureParams, ParamBox, SdeModel, SubjectDesign,
};
use crate::simulate::{check_step, derive_seed, simulate_stats_cohort};
use crate::stats::{ks_normal, mean, median, slope};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Consistency,
    MleNormality,
    Posterior,
    KlInfo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Em,
    Direct,
    Bayes,
}

/// Subject designs: all equal, or converging harmonically
/// `x^i = x_inf + (x_1 - x_inf) / i`, `T_i = T_inf + (T_1 - T_inf) / i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignMode {
    Iid {
        x0: f64,
        #[serde(rename = "T")]
        horizon: f64,
    },
    Noniid {
        x1: f64,
        x_inf: f64,
        #[serde(rename = "T1")]
        t1: f64,
        #[serde(rename = "T_inf")]
        t_inf: f64,
    },
}

impl DesignMode {
    /// Design of subject `i` (1-based).
    pub fn design(&self, i: usize) -> SubjectDesign {
        match *self {
            DesignMode::Iid { x0, horizon } => SubjectDesign::new(x0, horizon),
            DesignMode::Noniid { x1, x_inf, t1, t_inf } => {
                let w = 1.0 / i as f64;
                SubjectDesign::new(x_inf + (x1 - x_inf) * w, t_inf + (t1 - t_inf) * w)
            }
        }
    }

    pub fn designs(&self, n: usize) -> Vec<SubjectDesign> {
        (1..=n).map(|i| self.design(i)).collect()
    }

    /// The design the sequence converges to.
    pub fn limit(&self) -> SubjectDesign {
        match *self {
            DesignMode::Iid { x0, horizon } => SubjectDesign::new(x0, horizon),
            DesignMode::Noniid { x_inf, t_inf, .. } => SubjectDesign::new(x_inf, t_inf),
        }
    }

    pub fn is_iid(&self) -> bool {
        matches!(self, DesignMode::Iid { .. })
    }

    /// Checks finiteness, positive horizons and `dt <= T / 100`, with
    /// pointers under `/design`.
    pub fn validate(&self, dt: f64) -> Result<()> {
        match *self {
            DesignMode::Iid { x0, horizon } => {
                if !x0.is_finite() {
                    return Err(Error::config("/design/x0", "must be finite"));
                }
                if !(horizon > 0.0 && horizon.is_finite()) {
                    return Err(Error::config("/design/T", "horizon must be positive"));
                }
            }
            DesignMode::Noniid { x1, x_inf, t1, t_inf } => {
                if !(x1.is_finite() && x_inf.is_finite()) {
                    return Err(Error::config("/design/x1", "initial values must be finite"));
                }
                if !(t1 > 0.0 && t_inf > 0.0 && t1.is_finite() && t_inf.is_finite()) {
                    return Err(Error::config("/design/T1", "horizons must be positive"));
                }
            }
        }
        if !(dt > 0.0) {
            return Err(Error::config("/dt", "time step must be positive"));
        }
        check_step(&SubjectDesign::new(0.0, self.min_horizon()), dt).map_err(|e| Error::config("/dt", e.to_string()))
    }

    fn min_horizon(&self) -> f64 {
        match *self {
            DesignMode::Iid { horizon, .. } => horizon,
            DesignMode::Noniid { t1, t_inf, .. } => t1.min(t_inf),
        }
    }
}

/// Pass/fail limits applied to the ladder summaries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub rmse_ratio_max: f64,
    pub ks_max: f64,
    pub coverage: [f64; 2],
    pub variance_slope: [f64; 2],
    pub concentration_delta: f64,
    pub max_failure_rate: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            rmse_ratio_max: 0.5,
            ks_max: 0.08,
            coverage: [0.91, 0.985],
            variance_slope: [-1.2, -0.8],
            concentration_delta: 0.5,
            max_failure_rate: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub model: String,
    #[serde(default = "one")]
    pub noise_scale: f64,
    pub theta0: MixtureParams,
    #[serde(rename = "box", default)]
    pub bx: ParamBox,
    pub ladder: Vec<usize>,
    pub replicates: usize,
    pub dt: f64,
    pub design: DesignMode,
    pub seed: u64,
    #[serde(default = "default_estimator")]
    pub estimator: Estimator,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub mcmc: McmcOptions,
    /// Subjects simulated for the information at `theta0`; defaults to 100
    /// times `replicates`.
    #[serde(default)]
    pub info_replicates: Option<usize>,
    /// Per-design subjects for running averages of information and KL.
    #[serde(default = "default_design_replicates")]
    pub design_replicates: usize,
    /// Subjects for the limit-design information and KL.
    #[serde(default = "default_limit_replicates")]
    pub limit_replicates: usize,
    /// Second argument of the KL divergence; defaults to `theta0` with every
    /// mean shifted by 0.5.
    #[serde(default)]
    pub theta_alt: Option<MixtureParams>,
    #[serde(default)]
    pub thresholds: Thresholds,
}

fn one() -> f64 {
    1.0
}
fn default_estimator() -> Estimator {
    Estimator::Em
}
fn default_restarts() -> usize {
    10
}
fn default_design_replicates() -> usize {
    100
}
fn default_limit_replicates() -> usize {
    100_000
}

impl ExperimentConfig {
    pub fn sde_model(&self) -> Result<SdeModel> {
        let model = SdeModel::from_name(&self.model)
            .ok_or_else(|| Error::config("/model", format!("unknown model {:?}", self.model)))?;
        Ok(model.with_noise_scale(self.noise_scale))
    }

    pub fn components(&self) -> usize {
        self.theta0.components()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config("/schema_version", format!("expected {SCHEMA_VERSION}")));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::config("/noise_scale", "noise scale must be positive"));
        }
        self.sde_model()?;
        let m = self.components();
        if let Some(v) = self.bx.check(m).first() {
            return Err(Error::config(format!("/box{}", v.pointer()), v.to_string()));
        }
        if let Some(v) = validate_params(&self.theta0, &self.bx).first() {
            return Err(Error::config(format!("/theta0{}", v.pointer()), v.to_string()));
        }
        if let Some(alt) = &self.theta_alt {
            if let Some(v) = validate_params(alt, &self.bx).first() {
                return Err(Error::config(format!("/theta_alt{}", v.pointer()), v.to_string()));
            }
        }
        if self.ladder.is_empty() {
            return Err(Error::config("/ladder", "ladder is empty"));
        }
        for (i, w) in self.ladder.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::config(format!("/ladder/{}", i + 1), "ladder must be strictly increasing"));
            }
        }
        if self.ladder[0] < 3 * m {
            return Err(Error::config("/ladder/0", format!("need at least 3M = {} subjects", 3 * m)));
        }
        if self.replicates < 10 {
            return Err(Error::config("/replicates", "need at least 10 replicates"));
        }
        self.design.validate(self.dt)?;
        if self.restarts == 0 {
            return Err(Error::config("/restarts", "need at least one start"));
        }
        if self.kind == ExperimentKind::Posterior || self.estimator == Estimator::Bayes {
            if self.mcmc.draws < 1000 {
                return Err(Error::config("/mcmc/draws", "need at least 1000 draws"));
            }
            self.prior.validate().map_err(|m| Error::config("/prior", m))?;
        }
        if self.kind == ExperimentKind::KlInfo && (self.design_replicates < 100 || self.limit_replicates < 100) {
            return Err(Error::config("/design_replicates", "need at least 100 subjects per design"));
        }
        Ok(())
    }

    fn theta_alt(&self) -> MixtureParams {
        self.theta_alt.clone().unwrap_or_else(|| {
            let mut t = self.theta0.clone();
            t.mu.iter_mut().for_each(|m| *m = (*m + 0.5).min(self.bx.mu[1]));
            t
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub status: VerdictStatus,
    pub detail: String,
}

impl Verdict {
    fn check(name: &str, ok: bool, detail: String) -> Self {
        Self { name: name.into(), status: if ok { VerdictStatus::Pass } else { VerdictStatus::Fail }, detail }
    }

    /// Passes when every coordinate does; the detail lists all of them and
    /// marks failures with `!`.
    fn per_coordinate(name: &str, items: Vec<(String, String, bool)>) -> Self {
        let detail: Vec<String> =
            items.iter().map(|(l, shown, ok)| format!("{l}: {shown}{}", if *ok { "" } else { " !" })).collect();
        Self::check(name, items.iter().all(|i| i.2), detail.join("; "))
    }

    fn skipped(name: &str, detail: &str) -> Self {
        Self { name: name.into(), status: VerdictStatus::Skipped, detail: detail.into() }
    }
}

/// One replicate at one ladder level; `values` line up with
/// [`ExperimentReport::value_labels`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub status: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub n: usize,
    pub completed: usize,
    pub failed: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub value_labels: Vec<String>,
    pub rows: Vec<ReplicateRow>,
    pub levels: Vec<LevelSummary>,
    pub verdicts: Vec<Verdict>,
    pub runtime_secs: f64,
}

impl ExperimentReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.status != VerdictStatus::Fail)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn metric(&self, n: usize, name: &str) -> Option<f64> {
        self.levels.iter().find(|l| l.n == n)?.metrics.get(name).copied()
    }
}

/// Natural-coordinate labels `a_k, mu_k, omega2_k`.
pub fn natural_labels(m: usize) -> Vec<String> {
    let mut out: Vec<String> = (1..=m).map(|k| format!("a_{k}")).collect();
    out.extend((1..=m).map(|k| format!("mu_{k}")));
    out.extend((1..=m).map(|k| format!("omega2_{k}")));
    out
}

fn cohort_seed(seed: u64, n: usize, r: usize) -> u64 {
    derive_seed(derive_seed(seed, n as u64), r as u64)
}

fn fit_mle(cfg: &ExperimentConfig, stats: &[crate::suffstats::SuffStats], seed: u64) -> Result<FitResult> {
    let m = cfg.components();
    match cfg.estimator {
        Estimator::Direct => {
            let init = moment_init(stats, m, &cfg.bx)?;
            direct_fit(stats, m, &cfg.bx, &init, &cfg.tolerances)
        }
        Estimator::Em | Estimator::Bayes => {
            Ok(multistart_fit(stats, m, &cfg.bx, cfg.restarts, seed, &cfg.tolerances, &[])?.best)
        }
    }
}

/// Point estimate of the configured estimator; for `bayes`, the posterior
/// mean of label-matched draws.
fn estimate(
    cfg: &ExperimentConfig,
    stats: &[crate::suffstats::SuffStats],
    seed: u64,
) -> Result<(MixtureParams, FitResult)> {
    let fit = fit_mle(cfg, stats, derive_seed(seed, 1))?;
    if cfg.estimator != Estimator::Bayes {
        return Ok((fit.theta.clone(), fit));
    }
    let opts = McmcOptions { seed: derive_seed(seed, 2), ..cfg.mcmc.clone() };
    let chain = mh_sample(stats, &cfg.prior, &cfg.bx, &fit.theta, fit.covariance().as_ref(), &opts)?;
    let draws = chain
        .post_burn_params()
        .iter()
        .map(|t| match_labels(t, &fit.theta).map(|t| t.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let d = draws[0].len();
    let means: Vec<f64> = (0..d).map(|j| mean(&draws.iter().map(|x| x[j]).collect::<Vec<_>>())).collect();
    Ok((MixtureParams::from_vec(&means), fit))
}

fn failure_verdict(rows: &[ReplicateRow], cap: f64) -> Verdict {
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    let rate = failed as f64 / rows.len().max(1) as f64;
    Verdict::check("failure_rate", rate <= cap, format!("{failed} of {} replicates failed", rows.len()))
}

fn summarize_levels(
    cfg: &ExperimentConfig,
    rows: &[ReplicateRow],
    f: impl Fn(&[&ReplicateRow]) -> BTreeMap<String, f64>,
) -> Vec<LevelSummary> {
    cfg.ladder
        .iter()
        .map(|&n| {
            let ok: Vec<&ReplicateRow> = rows.iter().filter(|r| r.n == n && r.status == "ok").collect();
            let failed = rows.iter().filter(|r| r.n == n && r.status != "ok").count();
            LevelSummary {
                n,
                completed: ok.len(),
                failed,
                metrics: if ok.is_empty() { BTreeMap::new() } else { f(&ok) },
            }
        })
        .collect()
}

fn run_rows(
    cfg: &ExperimentConfig,
    width: usize,
    work: impl Fn(usize, usize, u64) -> Result<Vec<f64>> + Sync,
) -> Vec<ReplicateRow> {
    let jobs: Vec<(usize, usize)> = cfg.ladder.iter().flat_map(|&n| (0..cfg.replicates).map(move |r| (n, r))).collect();
    jobs.par_iter()
        .map(|&(n, r)| {
            let seed = cohort_seed(cfg.seed, n, r);
            match work(n, r, seed) {
                Ok(values) => ReplicateRow { n, replicate: r, seed, status: "ok".into(), values },
                Err(e) => ReplicateRow {
                    n,
                    replicate: r,
                    seed,
                    status: format!("failed: {e}"),
                    values: vec![f64::NAN; width],
                },
            }
        })
        .collect()
}

fn column(rows: &[&ReplicateRow], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r.values[j]).collect()
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

/// Consistency ladder: per level, permutation-matched errors of the
/// estimate in natural coordinates. A level's error for a coordinate is the
/// root of the median squared error across replicates (`rmse_*`); the plain
/// root mean squared error is reported as `rmse_mean_*`.
pub fn run_consistency(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let model = cfg.sde_model()?;
    let m = cfg.components();
    let labels = natural_labels(m);
    let mut value_labels: Vec<String> = labels.iter().map(|l| format!("hat_{l}")).collect();
    value_labels.push("loglik".into());
    let truth = cfg.theta0.to_vec();
    let rows = run_rows(cfg, value_labels.len(), |n, _, seed| {
        let sim = simulate_stats_cohort(&model, &cfg.theta0, &cfg.design.designs(n), cfg.dt, seed)?;
        let (theta, fit) = estimate(cfg, &sim.stats, seed)?;
        let mut v = match_labels(&theta, &cfg.theta0)?.to_vec();
        v.push(fit.loglik);
        Ok(v)
    });
    let levels = summarize_levels(cfg, &rows, |ok| {
        let mut out = BTreeMap::new();
        for (j, l) in labels.iter().enumerate() {
            let sq: Vec<f64> = column(ok, j).iter().map(|x| (x - truth[j]).powi(2)).collect();
            out.insert(format!("rmse_{l}"), median(&sq).sqrt());
            out.insert(format!("rmse_mean_{l}"), mean(&sq).sqrt());
        }
        out
    });
    let mut verdicts = Vec::new();
    if cfg.ladder.len() >= 2 {
        let mut dec = Vec::new();
        let mut ratio = Vec::new();
        // A single weight is fixed at 1 and carries no error.
        for l in labels.iter().skip(if m == 1 { 1 } else { 0 }) {
            let key = format!("rmse_{l}");
            let series: Vec<f64> = levels.iter().map(|s| s.metrics.get(&key).copied().unwrap_or(f64::NAN)).collect();
            dec.push((l.clone(), format!("{series:.4?}"), strictly_decreasing(&series)));
            let r = series[series.len() - 1] / series[0];
            ratio.push((l.clone(), format!("{r:.3}"), r < cfg.thresholds.rmse_ratio_max));
        }
        verdicts.push(Verdict::per_coordinate("rmse_decreasing", dec));
        verdicts.push(Verdict::per_coordinate("rmse_ratio", ratio));
    } else {
        verdicts.push(Verdict::skipped("rmse_decreasing", "single-level ladder"));
        verdicts.push(Verdict::skipped("rmse_ratio", "single-level ladder"));
    }
    verdicts.push(failure_verdict(&rows, cfg.thresholds.max_failure_rate));
    Ok(ExperimentReport {
        kind: ExperimentKind::Consistency,
        seed: cfg.seed,
        value_labels,
        rows,
        levels,
        verdicts,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Lower Cholesky factor of the inverse of `info`.
pub fn inverse_cholesky(info: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    info.clone()
        .cholesky()
        .map(|c| c.inverse())
        .and_then(|s| s.cholesky())
        .map(|c| c.l())
        .ok_or_else(|| Error::Estimation("information matrix at theta0 is singular or not positive definite".into()))
}

/// `L^{-1} sqrt(n) diff` with `L` from [`inverse_cholesky`]; standard normal
/// when `diff ~ N(0, I^{-1}/n)`.
pub fn standardize(diff: &DVector<f64>, factor: &DMatrix<f64>, n: usize) -> Result<DVector<f64>> {
    factor
        .solve_lower_triangular(&(diff * (n as f64).sqrt()))
        .ok_or_else(|| Error::LinAlg("triangular solve failed".into()))
}

/// Information per subject at `theta0` averaged over the first `n` designs.
fn design_information(cfg: &ExperimentConfig, model: &SdeModel, n: usize) -> Result<DMatrix<f64>> {
    let total = cfg.info_replicates.unwrap_or(100 * cfg.replicates);
    let seed = derive_seed(cfg.seed, 0x1f0 + n as u64);
    let est = if cfg.design.is_iid() {
        expected_info_designs(&cfg.theta0, model, &[cfg.design.design(1)], total.max(100), cfg.dt, seed, cfg.bx.a_min)?
    } else {
        let per = total.div_ceil(n).max(100);
        expected_info_designs(&cfg.theta0, model, &cfg.design.designs(n), per, cfg.dt, seed, cfg.bx.a_min)?
    };
    Ok(est.score_outer)
}

/// Normality of `sqrt(n)(x_hat - x0)` in the chart, whitened by the
/// Cholesky factor of the inverse information at `theta0`, plus Wald 95%
/// interval coverage from the observed information.
pub fn run_mle_normality(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let model = cfg.sde_model()?;
    let m = cfg.components();
    let chart = Chart::new(m, cfg.bx.a_min);
    let d = chart.dim();
    let clabels = crate::bayes::chart_labels(m);
    let x0 = DVector::from_vec(chart.from_params(&cfg.theta0));
    let factors: BTreeMap<usize, DMatrix<f64>> = cfg
        .ladder
        .iter()
        .map(|&n| {
            let info =
                if cfg.design.is_iid() && n != cfg.ladder[0] { None } else { Some(design_information(cfg, &model, n)) };
            (n, info)
        })
        .filter_map(|(n, i)| i.map(|i| (n, i)))
        .map(|(n, i)| i.and_then(|i| inverse_cholesky(&i)).map(|l| (n, l)))
        .collect::<Result<_>>()?;
    let factor_for = |n: usize| if cfg.design.is_iid() { &factors[&cfg.ladder[0]] } else { &factors[&n] };
    let mut value_labels: Vec<String> = clabels.iter().map(|l| format!("z_{l}")).collect();
    value_labels.extend(clabels.iter().map(|l| format!("covered_{l}")));
    value_labels.extend(clabels.iter().map(|l| format!("hat_{l}")));
    let rows = run_rows(cfg, value_labels.len(), |n, _, seed| {
        let sim = simulate_stats_cohort(&model, &cfg.theta0, &cfg.design.designs(n), cfg.dt, seed)?;
        let (_, fit) = estimate(cfg, &sim.stats, seed)?;
        let matched = match_labels(&fit.theta, &cfg.theta0)?;
        let xh = DVector::from_vec(chart.from_params(&matched));
        let diff = &xh - &x0;
        let z = standardize(&diff, factor_for(n), n)?;
        // observed information in the matched labelling
        let info = crate::mle::observed_info(&sim.stats, &matched, &cfg.bx)?;
        let cov = info.cholesky().map(|c| c.inverse());
        let mut v: Vec<f64> = z.iter().copied().collect();
        for j in 0..d {
            let covered = cov.as_ref().map(|c| diff[j].abs() <= 1.959963984540054 * c[(j, j)].sqrt()).unwrap_or(false);
            v.push(if covered { 1.0 } else { 0.0 });
        }
        v.extend(xh.iter());
        Ok(v)
    });
    let levels = summarize_levels(cfg, &rows, |ok| {
        let mut out = BTreeMap::new();
        for (j, l) in clabels.iter().enumerate() {
            out.insert(format!("ks_{l}"), ks_normal(&column(ok, j)));
            out.insert(format!("coverage_{l}"), mean(&column(ok, d + j)));
        }
        let hats: Vec<DVector<f64>> = ok.iter().map(|r| DVector::from_column_slice(&r.values[2 * d..3 * d])).collect();
        let centre = hats.iter().fold(DVector::zeros(d), |a, h| a + h) / hats.len() as f64;
        let tr = hats.iter().map(|h| (h - &centre).norm_squared()).sum::<f64>() / (hats.len() as f64 - 1.0);
        out.insert("cov_trace".into(), tr);
        out
    });
    let last = &levels[levels.len() - 1];
    let mut verdicts = Vec::new();
    let ks: Vec<_> = clabels
        .iter()
        .map(|l| {
            let ks = last.metrics.get(&format!("ks_{l}")).copied().unwrap_or(f64::NAN);
            (l.clone(), format!("{ks:.4}"), ks <= cfg.thresholds.ks_max)
        })
        .collect();
    verdicts.push(Verdict::per_coordinate("ks", ks));
    let [lo, hi] = cfg.thresholds.coverage;
    let cov: Vec<_> = clabels
        .iter()
        .map(|l| {
            let c = last.metrics.get(&format!("coverage_{l}")).copied().unwrap_or(f64::NAN);
            (l.clone(), format!("{c:.3}"), c >= lo && c <= hi)
        })
        .collect();
    verdicts.push(Verdict::per_coordinate("coverage", cov));
    if levels.len() >= 2 {
        let ln: Vec<f64> = levels.iter().map(|l| (l.n as f64).ln()).collect();
        let lt: Vec<f64> =
            levels.iter().map(|l| l.metrics.get("cov_trace").copied().unwrap_or(f64::NAN).ln()).collect();
        let s = slope(&ln, &lt);
        let [a, b] = cfg.thresholds.variance_slope;
        verdicts.push(Verdict::check("variance_slope", s >= a && s <= b, format!("slope {s:.3}")));
    } else {
        verdicts.push(Verdict::skipped("variance_slope", "single-level ladder"));
    }
    verdicts.push(failure_verdict(&rows, cfg.thresholds.max_failure_rate));
    Ok(ExperimentReport {
        kind: ExperimentKind::MleNormality,
        seed: cfg.seed,
        value_labels,
        rows,
        levels,
        verdicts,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Posterior ladder: per cohort, the fraction of post-burn-in draws within
/// `concentration_delta` of `theta0` (permutation distance), KS distances of
/// the whitened draws to the standard normal, and posterior standard
/// deviations of label-matched draws.
pub fn run_posterior_asymptotics(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let model = cfg.sde_model()?;
    let m = cfg.components();
    let clabels = crate::bayes::chart_labels(m);
    let nlabels = natural_labels(m);
    let d = clabels.len();
    let mut value_labels = vec!["concentration".to_string(), "acceptance".to_string()];
    value_labels.extend(clabels.iter().map(|l| format!("ks_{l}")));
    value_labels.extend(nlabels.iter().map(|l| format!("post_mean_{l}")));
    value_labels.extend(nlabels.iter().map(|l| format!("post_sd_{l}")));
    let delta = cfg.thresholds.concentration_delta;
    let rows = run_rows(cfg, value_labels.len(), |n, _, seed| {
        let sim = simulate_stats_cohort(&model, &cfg.theta0, &cfg.design.designs(n), cfg.dt, seed)?;
        let fit = fit_mle(cfg, &sim.stats, derive_seed(seed, 1))?;
        let opts = McmcOptions { seed: derive_seed(seed, 2), ..cfg.mcmc.clone() };
        let chain = mh_sample(&sim.stats, &cfg.prior, &cfg.bx, &fit.theta, fit.covariance().as_ref(), &opts)?;
        let draws = chain.post_burn_params();
        let near = draws
            .iter()
            .map(|t| permutation_distance(t, &cfg.theta0).map(|dist| (dist < delta) as usize))
            .sum::<Result<usize>>()?;
        let psi = psi_transform(&draws, &fit.theta, &fit.observed_info_matrix(), cfg.bx.a_min)?;
        let report = posterior_normality_report(&psi, &NormalityThresholds::default());
        let matched =
            draws.iter().map(|t| match_labels(t, &cfg.theta0).map(|t| t.to_vec())).collect::<Result<Vec<_>>>()?;
        let mut v = vec![near as f64 / draws.len() as f64, chain.acceptance_rate];
        v.extend(report.coords.iter().map(|c| c.ks));
        let cols: Vec<Vec<f64>> = (0..nlabels.len()).map(|j| matched.iter().map(|x| x[j]).collect()).collect();
        v.extend(cols.iter().map(|c| mean(c)));
        v.extend(cols.iter().map(|c| crate::stats::std_dev(c)));
        Ok(v)
    });
    let levels = summarize_levels(cfg, &rows, |ok| {
        let mut out = BTreeMap::new();
        out.insert("concentration".into(), median(&column(ok, 0)));
        out.insert("acceptance".into(), median(&column(ok, 1)));
        for (j, l) in clabels.iter().enumerate() {
            out.insert(format!("ks_{l}"), median(&column(ok, 2 + j)));
        }
        for (j, l) in nlabels.iter().enumerate() {
            out.insert(format!("post_sd_{l}"), median(&column(ok, 2 + d + nlabels.len() + j)));
        }
        out
    });
    let mut verdicts = Vec::new();
    let conc: Vec<f64> = levels.iter().map(|l| l.metrics.get("concentration").copied().unwrap_or(f64::NAN)).collect();
    let ks_series = |l: &str| -> Vec<f64> {
        levels.iter().map(|s| s.metrics.get(&format!("ks_{l}")).copied().unwrap_or(f64::NAN)).collect()
    };
    if levels.len() >= 2 {
        verdicts.push(Verdict::check(
            "concentration_nondecreasing",
            conc.windows(2).all(|w| w[1] >= w[0]),
            format!("{conc:.4?}"),
        ));
        let dec: Vec<_> = clabels
            .iter()
            .map(|l| {
                let s = ks_series(l);
                (l.clone(), format!("{s:.4?}"), strictly_decreasing(&s))
            })
            .collect();
        verdicts.push(Verdict::per_coordinate("ks_decreasing", dec));
    } else {
        verdicts.push(Verdict::skipped("concentration_nondecreasing", "single-level ladder"));
        verdicts.push(Verdict::skipped("ks_decreasing", "single-level ladder"));
    }
    let last: Vec<_> = clabels
        .iter()
        .map(|l| {
            let k = *ks_series(l).last().unwrap_or(&f64::NAN);
            (l.clone(), format!("{k:.4}"), k <= cfg.thresholds.ks_max)
        })
        .collect();
    verdicts.push(Verdict::per_coordinate("ks_final", last));
    verdicts.push(failure_verdict(&rows, cfg.thresholds.max_failure_rate));
    Ok(ExperimentReport {
        kind: ExperimentKind::Posterior,
        seed: cfg.seed,
        value_labels,
        rows,
        levels,
        verdicts,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Information matrix and KL divergence of one design.
type InfoKl = (DMatrix<f64>, f64);

/// Per-design information and KL divergence `K(theta0, theta_alt)` for one
/// design from `r` subjects simulated at `theta0`.
fn design_info_kl(
    cfg: &ExperimentConfig,
    model: &SdeModel,
    design: SubjectDesign,
    r: usize,
    seed: u64,
    alt: &MixtureParams,
) -> Result<InfoKl> {
    let sim = simulate_stats_cohort(model, &cfg.theta0, &vec![design; r], cfg.dt, seed)?;
    let info = info_from_stats(&sim.stats, &cfg.theta0, cfg.bx.a_min).score_outer;
    let kl: Vec<f64> = sim
        .stats
        .iter()
        .map(|s| log_lambda_unchecked(s.u, s.v, &cfg.theta0) - log_lambda_unchecked(s.u, s.v, alt))
        .collect();
    Ok((info, mean(&kl)))
}

/// Running averages over designs `1..=n` of the per-design information and
/// KL divergence, compared with their values at the limit design. Each
/// replicate redraws every design's subjects; the limit values are shared.
pub fn empirical_kl_info_limits(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let model = cfg.sde_model()?;
    let alt = cfg.theta_alt();
    let limit_seed = derive_seed(cfg.seed, 0x11a);
    let (info_inf, kl_inf) = design_info_kl(cfg, &model, cfg.design.limit(), cfg.limit_replicates, limit_seed, &alt)?;
    let n_max = *cfg.ladder.last().unwrap_or(&0);
    let value_labels: Vec<String> =
        ["info_gap", "kl_gap", "info_fro", "kl", "kl_first"].iter().map(|s| s.to_string()).collect();
    let per_rep: Vec<Result<Vec<InfoKl>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let rep_seed = derive_seed(derive_seed(cfg.seed, 0x5eed), r as u64);
            (1..=n_max)
                .map(|k| {
                    design_info_kl(
                        cfg,
                        &model,
                        cfg.design.design(k),
                        cfg.design_replicates,
                        derive_seed(rep_seed, k as u64),
                        &alt,
                    )
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for &n in &cfg.ladder {
        for (r, res) in per_rep.iter().enumerate() {
            let seed = derive_seed(derive_seed(cfg.seed, 0x5eed), r as u64);
            rows.push(match res {
                Ok(per) => {
                    let info_bar =
                        per[..n].iter().fold(DMatrix::zeros(info_inf.nrows(), info_inf.ncols()), |a, (i, _)| a + i)
                            / n as f64;
                    let kl_bar = per[..n].iter().map(|(_, k)| k).sum::<f64>() / n as f64;
                    ReplicateRow {
                        n,
                        replicate: r,
                        seed,
                        status: "ok".into(),
                        values: vec![
                            (&info_bar - &info_inf).norm(),
                            (kl_bar - kl_inf).abs(),
                            info_bar.norm(),
                            kl_bar,
                            per[0].1,
                        ],
                    }
                }
                Err(e) => ReplicateRow {
                    n,
                    replicate: r,
                    seed,
                    status: format!("failed: {e}"),
                    values: vec![f64::NAN; value_labels.len()],
                },
            });
        }
    }
    let mut levels = summarize_levels(cfg, &rows, |ok| {
        let mut out = BTreeMap::new();
        for (j, l) in value_labels.iter().enumerate() {
            out.insert(l.clone(), median(&column(ok, j)));
        }
        out
    });
    for l in &mut levels {
        l.metrics.insert("info_limit_fro".into(), info_inf.norm());
        l.metrics.insert("kl_limit".into(), kl_inf);
    }
    let mut verdicts = Vec::new();
    if cfg.design.is_iid() {
        verdicts.push(Verdict::skipped("info_gap_decreasing", "identical designs"));
        verdicts.push(Verdict::skipped("kl_gap_decreasing", "identical designs"));
    } else if levels.len() < 2 {
        verdicts.push(Verdict::skipped("info_gap_decreasing", "single-level ladder"));
        verdicts.push(Verdict::skipped("kl_gap_decreasing", "single-level ladder"));
    } else {
        for name in ["info_gap", "kl_gap"] {
            let s: Vec<f64> = levels.iter().map(|l| l.metrics.get(name).copied().unwrap_or(f64::NAN)).collect();
            verdicts.push(Verdict::check(&format!("{name}_decreasing"), strictly_decreasing(&s), format!("{s:.4?}")));
        }
    }
    verdicts.push(failure_verdict(&rows, cfg.thresholds.max_failure_rate));
    Ok(ExperimentReport {
        kind: ExperimentKind::KlInfo,
        seed: cfg.seed,
        value_labels,
        rows,
        levels,
        verdicts,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    match cfg.kind {
        ExperimentKind::Consistency => run_consistency(cfg),
        ExperimentKind::MleNormality => run_mle_normality(cfg),
        ExperimentKind::Posterior => run_posterior_asymptotics(cfg),
        ExperimentKind::KlInfo => empirical_kl_info_limits(cfg),
    }
}

/// Plot-ready CSV: one row per replicate per ladder level.
pub fn write_report_csv<W: std::io::Write>(report: &ExperimentReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["n".to_string(), "replicate".into(), "seed".into(), "status".into()];
    header.extend(report.value_labels.iter().cloned());
    out.write_record(&header)?;
    for r in &report.rows {
        let mut rec = vec![r.n.to_string(), r.replicate.to_string(), r.seed.to_string(), r.status.clone()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}
