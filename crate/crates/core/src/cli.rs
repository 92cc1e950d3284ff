//! The `mixfx` command line: config files in, CSV/JSON artifacts out, and a
//! run manifest as the last line on stdout.
//!
//! Exit codes: 0 success, 2 config or input error, 3 estimation error,
//! 4 experiment verdict failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::{run_experiment, write_report_csv, DesignMode, ExperimentConfig, SCHEMA_VERSION};
use crate::bayes::{
    mh_sample, posterior_normality_report, psi_transform, McmcOptions, NormalityReport, NormalityThresholds, PriorSpec,
};
use crate::error::{Error, Result};
use crate::io::{read_cohort_csv, read_stats_csv, write_chain_csv, write_cohort_csv, write_stats_csv, Sidecar};
use crate::mle::{bic_select, multistart_direct_fit, multistart_fit, FitResult, Tolerances};
use crate::model::{match_labels, validate_params, MixtureParams, ParamBox, SdeModel};
use crate::simulate::{derive_seed, simulate_cohort};
use crate::suffstats::compute_suffstats;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ESTIMATION: i32 = 3;
pub const EXIT_VERDICT: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "mixfx", version, about = "SDE random-effects models with normal-mixture effects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true, env = "MIXFX_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a cohort: cohort.csv and sidecar.json.
    Simulate(Common),
    /// Sufficient statistics of a cohort: stats.csv.
    Suffstats {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out-dir>/cohort.csv`.
        #[arg(long)]
        cohort: Option<PathBuf>,
    },
    /// Fit a mixture to stats.csv: fit.json, plus chain.csv for `bayes`.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out-dir>/stats.csv`.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Overrides `fit.method` in the config.
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Run an asymptotics experiment: report.json and report.csv.
    Experiment(Common),
    /// Print the model catalogue and example configs.
    Info,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Em,
    Direct,
    Bayes,
}

/// Config shared by `simulate`, `suffstats` and `fit`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: String,
    #[serde(default = "one")]
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "box", default)]
    pub bx: ParamBox,
    /// `theta0`, `n`, `dt` and `design` are required by `simulate` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<MixtureParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignMode>,
    #[serde(default)]
    pub fit: FitSection,
}

/// The simulation inputs of a [`RunConfig`].
pub struct SimulateSpec<'a> {
    pub theta0: &'a MixtureParams,
    pub n: usize,
    pub dt: f64,
    pub design: DesignMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub method: Method,
    pub components: usize,
    /// When set, `M` is chosen by BIC over these values and `components` is
    /// ignored.
    pub select_components: Option<Vec<usize>>,
    pub restarts: usize,
    pub tolerances: Tolerances,
    pub prior: PriorSpec,
    /// `mcmc.seed` is replaced by one derived from the run seed.
    pub mcmc: McmcOptions,
    pub normality: NormalityThresholds,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            method: Method::Em,
            components: 1,
            select_components: None,
            restarts: 10,
            tolerances: Tolerances::default(),
            prior: PriorSpec::default(),
            mcmc: McmcOptions::default(),
            normality: NormalityThresholds::default(),
        }
    }
}

fn one() -> f64 {
    1.0
}

impl RunConfig {
    pub fn sde_model(&self) -> Result<SdeModel> {
        let model = SdeModel::from_name(&self.model)
            .ok_or_else(|| Error::config("/model", format!("unknown model {:?}", self.model)))?;
        Ok(model.with_noise_scale(self.noise_scale))
    }

    pub fn simulate_spec(&self) -> Result<SimulateSpec<'_>> {
        let missing = |f: &str| Error::config(format!("/{f}"), format!("{f} is required by simulate"));
        Ok(SimulateSpec {
            theta0: self.theta0.as_ref().ok_or_else(|| missing("theta0"))?,
            n: self.n.ok_or_else(|| missing("n"))?,
            dt: self.dt.ok_or_else(|| missing("dt"))?,
            design: self.design.ok_or_else(|| missing("design"))?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config("/schema_version", format!("expected {SCHEMA_VERSION}")));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::config("/noise_scale", "noise scale must be positive"));
        }
        self.sde_model()?;
        if let Some(theta0) = &self.theta0 {
            if let Some(v) = validate_params(theta0, &self.bx).first() {
                return Err(Error::config(format!("/theta0{}", v.pointer()), v.to_string()));
            }
        }
        if self.n == Some(0) {
            return Err(Error::config("/n", "need at least one subject"));
        }
        if let (Some(design), Some(dt)) = (&self.design, self.dt) {
            design.validate(dt)?;
        }
        let f = &self.fit;
        let ms = f.select_components.clone().unwrap_or_else(|| vec![f.components]);
        if ms.is_empty() || ms.contains(&0) {
            return Err(Error::config("/fit/components", "component counts must be positive"));
        }
        for &m in &ms {
            if let Some(v) = self.bx.check(m).first() {
                return Err(Error::config(format!("/box{}", v.pointer()), v.to_string()));
            }
        }
        if f.restarts == 0 {
            return Err(Error::config("/fit/restarts", "need at least one start"));
        }
        if f.method == Method::Bayes {
            if f.mcmc.draws < 1000 {
                return Err(Error::config("/fit/mcmc/draws", "need at least 1000 draws"));
            }
            if f.mcmc.burn() >= f.mcmc.draws {
                return Err(Error::config("/fit/mcmc/burn_in", "burn-in must be shorter than the chain"));
            }
            f.prior.validate().map_err(|m| Error::config("/fit/prior", m))?;
        }
        Ok(())
    }
}

/// Written as one JSON line after every command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// SHA-256 of the config file bytes; empty for `info`.
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub exit_code: i32,
    pub error: Option<String>,
    pub outputs: Vec<OutputFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

/// Summary of a posterior run, written as `chain_summary.json`.
#[derive(Clone, Debug, Serialize)]
pub struct ChainSummary {
    pub draws: usize,
    pub burn_in: usize,
    pub acceptance_rate: f64,
    pub burn_in_acceptance: f64,
    pub scale: f64,
    pub flags: Vec<String>,
    /// Posterior means and sds, draws label-matched to the MLE.
    pub posterior_mean: MixtureParams,
    pub posterior_sd: MixtureParams,
    pub normality: NormalityReport,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn config(e: Error) -> Self {
        Self { code: EXIT_CONFIG, message: e.to_string() }
    }
    fn estimation(e: Error) -> Self {
        Self { code: EXIT_ESTIMATION, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// JSON pointer of a deserialization path, e.g. `/theta0/omega2/0`.
fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { .. } | Segment::Unknown => {}
        }
    }
    out
}

/// Deserializes `bytes` as JSON, reporting failures with a JSON pointer.
pub fn parse_config<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = json_pointer(e.path());
        Error::config(pointer, e.into_inner().to_string())
    })
}

struct Run {
    config_sha256: String,
    seed: Option<u64>,
    outputs: Vec<OutputFile>,
}

impl Run {
    fn new() -> Self {
        Self { config_sha256: String::new(), seed: None, outputs: Vec::new() }
    }

    fn read_config<T: DeserializeOwned>(&mut self, path: &FsPath) -> CliResult<T> {
        let bytes = fs::read(path)
            .map_err(|e| Failure::config(Error::config("", format!("reading {}: {e}", path.display()))))?;
        self.config_sha256 = sha256_hex(&bytes);
        parse_config(&bytes).map_err(Failure::config)
    }

    fn write(&mut self, dir: &FsPath, name: &str, bytes: &[u8]) -> CliResult<()> {
        fs::create_dir_all(dir).map_err(|e| Failure::config(e.into()))?;
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Failure::estimation(e.into()))?;
        self.outputs.push(OutputFile { path: path.display().to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, dir: &FsPath, name: &str, value: &T) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::estimation(e.into()))?;
        bytes.push(b'\n');
        self.write(dir, name, &bytes)
    }
}

fn load_run_config(run: &mut Run, common: &Common) -> CliResult<RunConfig> {
    let mut cfg: RunConfig = run.read_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    run.seed = Some(cfg.seed);
    cfg.validate().map_err(Failure::config)?;
    Ok(cfg)
}

fn cmd_simulate(run: &mut Run, common: &Common) -> CliResult<()> {
    let cfg = load_run_config(run, common)?;
    let sim = cfg.simulate_spec().map_err(Failure::config)?;
    let model = cfg.sde_model().map_err(Failure::config)?;
    let designs = sim.design.designs(sim.n);
    let cohort = simulate_cohort(&model, sim.theta0, &designs, sim.dt, cfg.seed).map_err(Failure::estimation)?;
    let mut csv = Vec::new();
    write_cohort_csv(&cohort, &mut csv).map_err(Failure::estimation)?;
    run.write(&common.out_dir, "cohort.csv", &csv)?;
    run.write_json(&common.out_dir, "sidecar.json", &Sidecar::from_cohort(&cohort, &model.name))
}

fn cmd_suffstats(run: &mut Run, common: &Common, cohort: Option<&PathBuf>) -> CliResult<()> {
    let cfg = load_run_config(run, common)?;
    let model = cfg.sde_model().map_err(Failure::config)?;
    let path = cohort.cloned().unwrap_or_else(|| common.out_dir.join("cohort.csv"));
    let file = fs::File::open(&path)
        .map_err(|e| Failure::config(Error::config("", format!("reading {}: {e}", path.display()))))?;
    let paths = read_cohort_csv(file).map_err(Failure::config)?;
    let stats = paths
        .iter()
        .map(|(id, p)| compute_suffstats(p, &model).map_err(|e| e.for_subject(*id)))
        .collect::<Result<Vec<_>>>()
        .map_err(Failure::estimation)?;
    let mut csv = Vec::new();
    write_stats_csv(&stats, &mut csv).map_err(Failure::estimation)?;
    run.write(&common.out_dir, "stats.csv", &csv)
}

fn cmd_fit(run: &mut Run, common: &Common, stats: Option<&PathBuf>, method: Option<Method>) -> CliResult<()> {
    let mut raw: RunConfig = run.read_config(&common.config)?;
    if let Some(m) = method {
        raw.fit.method = m;
    }
    if let Some(seed) = common.seed {
        raw.seed = seed;
    }
    run.seed = Some(raw.seed);
    raw.validate().map_err(Failure::config)?;
    let cfg = raw;
    let f = &cfg.fit;
    let path = stats.cloned().unwrap_or_else(|| common.out_dir.join("stats.csv"));
    let file = fs::File::open(&path)
        .map_err(|e| Failure::config(Error::config("", format!("reading {}: {e}", path.display()))))?;
    let stats = read_stats_csv(file).map_err(Failure::config)?;
    let mle_seed = derive_seed(cfg.seed, 1);

    let m = match &f.select_components {
        Some(ms) => {
            let sel =
                bic_select(&stats, ms, &cfg.bx, f.restarts, mle_seed, &f.tolerances).map_err(Failure::estimation)?;
            let mut table = b"M,loglik,bic,free_params\n".to_vec();
            for r in &sel.rows {
                table.extend(format!("{},{},{},{}\n", r.m, r.loglik, r.bic, r.free_params).into_bytes());
            }
            run.write(&common.out_dir, "bic.csv", &table)?;
            sel.best
        }
        None => f.components,
    };
    let fit = match f.method {
        Method::Direct => multistart_direct_fit(&stats, m, &cfg.bx, f.restarts, mle_seed, &f.tolerances),
        Method::Em | Method::Bayes => {
            multistart_fit(&stats, m, &cfg.bx, f.restarts, mle_seed, &f.tolerances, &[]).map(|mut r| {
                r.best.method = "em".into();
                r
            })
        }
    }
    .map_err(Failure::estimation)?
    .best;
    run.write_json(&common.out_dir, "fit.json", &fit)?;
    if f.method == Method::Bayes {
        bayes_outputs(run, common, &cfg, &stats, &fit)?;
    }
    Ok(())
}

fn bayes_outputs(
    run: &mut Run,
    common: &Common,
    cfg: &RunConfig,
    stats: &[crate::SuffStats],
    fit: &FitResult,
) -> CliResult<()> {
    let f = &cfg.fit;
    let opts = McmcOptions { seed: derive_seed(cfg.seed, 2), ..f.mcmc.clone() };
    let cov = fit.covariance();
    let chain = mh_sample(stats, &f.prior, &cfg.bx, &fit.theta, cov.as_ref(), &opts).map_err(Failure::estimation)?;
    let mut csv = Vec::new();
    write_chain_csv(&chain, &mut csv).map_err(Failure::estimation)?;
    run.write(&common.out_dir, "chain.csv", &csv)?;

    let draws = chain.post_burn_params();
    let psi =
        psi_transform(&draws, &fit.theta, &fit.observed_info_matrix(), cfg.bx.a_min).map_err(Failure::estimation)?;
    let normality = posterior_normality_report(&psi, &f.normality);
    let matched: Vec<Vec<f64>> = draws
        .iter()
        .map(|t| match_labels(t, &fit.theta).map(|t| t.to_vec()))
        .collect::<Result<_>>()
        .map_err(Failure::estimation)?;
    let d = fit.theta.to_vec().len();
    let n = matched.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| matched.iter().map(|x| x[j]).sum::<f64>() / n).collect();
    let sd: Vec<f64> =
        (0..d).map(|j| (matched.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()).collect();
    let summary = ChainSummary {
        draws: chain.draws.len(),
        burn_in: chain.burn_in,
        acceptance_rate: chain.acceptance_rate,
        burn_in_acceptance: chain.burn_in_acceptance,
        scale: chain.scale,
        flags: chain.flags.clone(),
        posterior_mean: MixtureParams::from_vec(&mean),
        posterior_sd: MixtureParams::from_vec(&sd),
        normality,
    };
    run.write_json(&common.out_dir, "chain_summary.json", &summary)
}

fn cmd_experiment(run: &mut Run, common: &Common) -> CliResult<()> {
    let mut cfg: ExperimentConfig = run.read_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    run.seed = Some(cfg.seed);
    cfg.validate().map_err(Failure::config)?;
    let report = run_experiment(&cfg).map_err(Failure::estimation)?;
    run.write_json(&common.out_dir, "report.json", &report)?;
    let mut csv = Vec::new();
    write_report_csv(&report, &mut csv).map_err(Failure::estimation)?;
    run.write(&common.out_dir, "report.csv", &csv)?;
    if report.all_pass() {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .verdicts
            .iter()
            .filter(|v| v.status == crate::asymptotics::VerdictStatus::Fail)
            .map(|v| v.name.as_str())
            .collect();
        Err(Failure { code: EXIT_VERDICT, message: format!("verdicts failed: {}", failed.join(", ")) })
    }
}

/// Model catalogue and example configs for every command.
pub fn info_json() -> serde_json::Value {
    let models: Vec<serde_json::Value> = ["linear", "constant", "damped"]
        .iter()
        .filter_map(|n| SdeModel::from_name(n))
        .map(|m| serde_json::json!({ "name": m.name, "tau": m.tau }))
        .collect();
    let run = RunConfig {
        schema_version: SCHEMA_VERSION,
        model: "linear".into(),
        noise_scale: 1.0,
        seed: 1,
        bx: ParamBox::default(),
        theta0: Some(MixtureParams::new(vec![0.4, 0.6], vec![-1.0, 2.0], vec![0.25, 0.5])),
        n: Some(200),
        dt: Some(1e-3),
        design: Some(DesignMode::Iid { x0: 3.0, horizon: 1.0 }),
        fit: FitSection { components: 2, ..FitSection::default() },
    };
    serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "schema_version": SCHEMA_VERSION,
        "models": models,
        "commands": ["simulate", "suffstats", "fit", "experiment", "info"],
        "fit_methods": ["em", "direct", "bayes"],
        "experiment_kinds": ["consistency", "mle_normality", "posterior", "kl_info"],
        "exit_codes": { "0": "success", "2": "config or input error", "3": "estimation error", "4": "verdict failure" },
        "run_config_example": run,
        "cohort_csv": ["subject", "t", "X"],
        "stats_csv": ["subject", "U", "V", "x0", "T"],
    })
}

/// Parses `args`, runs the command, prints the manifest and returns the exit
/// code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let started = now_ms();
    let mut run = Run::new();
    let result = match cli.threads {
        Some(0) => Err(Failure::config(Error::config("", "--threads must be positive"))),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::config(Error::config("", e.to_string()))),
        None => Ok(()),
    }
    .and_then(|()| match &cli.command {
        Command::Simulate(c) => cmd_simulate(&mut run, c),
        Command::Suffstats { common, cohort } => cmd_suffstats(&mut run, common, cohort.as_ref()),
        Command::Fit { common, stats, method } => cmd_fit(&mut run, common, stats.as_ref(), *method),
        Command::Experiment(c) => cmd_experiment(&mut run, c),
        Command::Info => {
            println!("{}", serde_json::to_string_pretty(&info_json()).expect("serializable"));
            Ok(())
        }
    });
    let (exit_code, error) = match result {
        Ok(()) => (EXIT_OK, None),
        Err(f) => {
            eprintln!("error: {}", f.message);
            (f.code, Some(f.message))
        }
    };
    let command = match &cli.command {
        Command::Simulate(_) => "simulate",
        Command::Suffstats { .. } => "suffstats",
        Command::Fit { .. } => "fit",
        Command::Experiment(_) => "experiment",
        Command::Info => "info",
    };
    let manifest = RunManifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: run.config_sha256,
        seed: run.seed,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        exit_code,
        error,
        outputs: run.outputs,
    };
    println!("{}", serde_json::to_string(&manifest).expect("serializable"));
    exit_code
}
