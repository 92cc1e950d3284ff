mod common;

use common::{theta_two, DT};
use mixfx::asymptotics::*;
use mixfx::bayes::{mh_sample, McmcOptions, PriorSpec};
use mixfx::chart::Chart;
use mixfx::mle::{expected_info_mc, multistart_fit, Tolerances};
use mixfx::model::{match_labels, permutation_distance};
use mixfx::simulate::{simulate_stats_cohort, SubjectRng};
use mixfx::stats::{ks_critical, ks_normal, mean, std_dev};
use mixfx::{Error, MixtureParams, ParamBox, SdeModel, SubjectDesign};
use nalgebra::DVector;

fn bundled(name: &str) -> ExperimentConfig {
    let path = format!("{}/configs/{name}", env!("CARGO_MANIFEST_DIR"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn kl_config(design: DesignMode) -> ExperimentConfig {
    let mut cfg = bundled("noniid-limits.json");
    cfg.design = design;
    cfg.ladder = vec![10, 40];
    cfg.replicates = 10;
    cfg.limit_replicates = 20_000;
    cfg
}

#[test]
fn consistency_small_completes_in_time() {
    let cfg = bundled("consistency-small.json");
    let report = run_experiment(&cfg).unwrap();
    println!("consistency-small: {:.2} s", report.runtime_secs);
    assert!(report.runtime_secs < 300.0);
    assert_eq!(report.rows.len(), 20);
    assert!(report.rows.iter().all(|r| r.status == "ok"));
    let json = serde_json::to_value(&report).unwrap();
    for v in json["verdicts"].as_array().unwrap() {
        assert!(["pass", "fail", "skipped"].contains(&v["status"].as_str().unwrap()));
    }
}

#[test]
fn reports_are_deterministic() {
    let cfg = bundled("consistency-small.json");
    let (mut a, mut b) = (run_experiment(&cfg).unwrap(), run_experiment(&cfg).unwrap());
    a.runtime_secs = 0.0;
    b.runtime_secs = 0.0;
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn large_cohort_recovers_theta0() {
    let theta = theta_two();
    let designs = vec![SubjectDesign::new(3.0, 1.0); 10_000];
    let sim = simulate_stats_cohort(&SdeModel::linear(), &theta, &designs, DT, 404).unwrap();
    let fit = multistart_fit(&sim.stats, 2, &ParamBox::default(), 5, 1, &Tolerances::default(), &[]).unwrap();
    let d = permutation_distance(&fit.best.theta, &theta).unwrap();
    assert!(d < 0.15, "distance {d}, theta {:?}", fit.best.theta);
}

#[test]
fn zero_noise_is_rejected() {
    let mut cfg = bundled("consistency-small.json");
    cfg.noise_scale = 0.0;
    match cfg.validate() {
        Err(Error::Config { pointer, .. }) => assert_eq!(pointer, "/noise_scale"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn bad_configs_are_rejected_with_pointers() {
    let base = bundled("consistency-small.json");
    type Edit = fn(&mut ExperimentConfig);
    let cases: [(Edit, &str); 5] = [
        (|c| c.ladder = vec![200, 50], "/ladder/1"),
        (|c| c.replicates = 5, "/replicates"),
        (|c| c.theta0.omega2[0] = -1.0, "/theta0/omega2/0"),
        (|c| c.dt = 0.05, "/dt"),
        (|c| c.schema_version = 2, "/schema_version"),
    ];
    for (edit, want) in cases {
        let mut cfg = base.clone();
        edit(&mut cfg);
        match cfg.validate() {
            Err(Error::Config { pointer, .. }) => assert_eq!(pointer, want),
            other => panic!("{want}: {other:?}"),
        }
    }
}

#[test]
fn harmonic_designs_converge_to_the_limit() {
    let mode = DesignMode::Noniid { x1: 1.0, x_inf: 3.0, t1: 2.0, t_inf: 1.0 };
    assert_eq!(mode.design(1), SubjectDesign::new(1.0, 2.0));
    assert_eq!(mode.design(2), SubjectDesign::new(2.0, 1.5));
    let d = mode.designs(1000);
    assert_eq!(d.len(), 1000);
    for w in d.windows(2) {
        assert!(w[1].x0 > w[0].x0 && w[1].horizon < w[0].horizon);
    }
    assert!((d[999].x0 - 3.0).abs() < 2.5e-3 && (d[999].horizon - 1.0).abs() < 1.5e-3);
    assert_eq!(mode.limit(), SubjectDesign::new(3.0, 1.0));
    let iid = DesignMode::Iid { x0: 0.5, horizon: 2.0 };
    assert!(iid.designs(5).iter().all(|d| *d == SubjectDesign::new(0.5, 2.0)));
}

#[test]
fn kl_at_theta0_is_zero() {
    let mut cfg = kl_config(DesignMode::Noniid { x1: 1.0, x_inf: 3.0, t1: 2.0, t_inf: 1.0 });
    cfg.theta_alt = Some(cfg.theta0.clone());
    let report = run_experiment(&cfg).unwrap();
    let j = report.value_labels.iter().position(|l| l == "kl").unwrap();
    for r in &report.rows {
        assert_eq!(r.values[j], 0.0);
    }
    assert_eq!(report.metric(40, "kl_limit"), Some(0.0));
}

#[test]
fn iid_running_averages_match_the_single_design() {
    let cfg = kl_config(DesignMode::Iid { x0: 3.0, horizon: 1.0 });
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.verdict("info_gap_decreasing").unwrap().status, VerdictStatus::Skipped);
    let col = |name: &str, n: usize| -> Vec<f64> {
        let j = report.value_labels.iter().position(|l| l == name).unwrap();
        report.rows.iter().filter(|r| r.n == n).map(|r| r.values[j]).collect()
    };
    let limit = report.metric(40, "kl_limit").unwrap();
    for (name, n) in [("kl_first", 10), ("kl", 10), ("kl", 40)] {
        let xs = col(name, n);
        let mcse = std_dev(&xs) / (xs.len() as f64).sqrt();
        // the limit value carries its own Monte Carlo error, far smaller
        assert!((mean(&xs) - limit).abs() < 4.0 * mcse + 0.02 * limit.abs(), "{name} at {n}: {} vs {limit}", mean(&xs));
    }
}

#[test]
fn standardization_passes_exact_normal_estimates() {
    let theta = theta_two();
    let bx = ParamBox::default();
    let info = expected_info_mc(&theta, &SdeModel::linear(), &SubjectDesign::new(3.0, 1.0), 2000, 1e-2, 5, bx.a_min)
        .unwrap()
        .score_outer;
    let factor = inverse_cholesky(&info).unwrap();
    let n = 400;
    let d = info.nrows();
    let mut rng = SubjectRng::new(77, 0);
    let zs: Vec<DVector<f64>> = (0..2000)
        .map(|_| {
            let g = DVector::from_fn(d, |_, _| rng.standard_normal());
            let diff = &factor * g / (n as f64).sqrt();
            standardize(&diff, &factor, n).unwrap()
        })
        .collect();
    for j in 0..d {
        let xs: Vec<f64> = zs.iter().map(|z| z[j]).collect();
        assert!(ks_normal(&xs) <= ks_critical(0.01, xs.len()));
    }
}

fn posterior_mean_sd(
    stats: &[mixfx::SuffStats],
    theta: &MixtureParams,
    prior: &PriorSpec,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let m = theta.components();
    let bx = ParamBox::default();
    let fit = multistart_fit(stats, m, &bx, 5, seed, &Tolerances::default(), &[]).unwrap().best;
    let opts = McmcOptions { draws: 30_000, seed, ..McmcOptions::default() };
    let chain = mh_sample(stats, prior, &bx, &fit.theta, fit.covariance().as_ref(), &opts).unwrap();
    let chart = Chart::new(m, bx.a_min);
    let xs: Vec<Vec<f64>> =
        chain.post_burn_params().iter().map(|t| chart.from_params(&match_labels(t, theta).unwrap())).collect();
    let d = xs[0].len();
    let col = |j: usize| xs.iter().map(|x| x[j]).collect::<Vec<_>>();
    ((0..d).map(|j| mean(&col(j))).collect(), (0..d).map(|j| std_dev(&col(j))).collect())
}

#[test]
fn prior_washes_out_at_n_800() {
    let theta = theta_two();
    let stats = common::ou_stats_x0(&theta, 800, 900, 3.0);
    let (m_uni, sd_uni) = posterior_mean_sd(&stats, &theta, &PriorSpec::Uniform, 1);
    let tn = PriorSpec::TruncatedNormal { mu_mean: 0.0, mu_sd: 2.0, omega2_mean: 1.0, omega2_sd: 1.0 };
    let (m_tn, _) = posterior_mean_sd(&stats, &theta, &tn, 2);
    for j in 0..m_uni.len() {
        assert!(
            (m_uni[j] - m_tn[j]).abs() < sd_uni[j],
            "coordinate {j}: {} vs {} (sd {})",
            m_uni[j],
            m_tn[j],
            sd_uni[j]
        );
    }
}

// One component: with two, a component holding about 20 of 50 subjects
// still has a skewed, prior-dominated variance posterior.
#[test]
fn posterior_sd_shrinks_like_root_n() {
    let theta = MixtureParams::single(1.0, 1.0);
    let (_, sd50) = posterior_mean_sd(&common::ou_stats_x0(&theta, 50, 901, 3.0), &theta, &PriorSpec::Uniform, 3);
    let (_, sd800) = posterior_mean_sd(&common::ou_stats_x0(&theta, 800, 902, 3.0), &theta, &PriorSpec::Uniform, 4);
    for j in 0..sd50.len() {
        let ratio = sd50[j] / sd800[j];
        println!("coordinate {j}: sd ratio {ratio:.2}");
        assert!((2.0..=8.0).contains(&ratio), "coordinate {j}: ratio {ratio}");
    }
}
