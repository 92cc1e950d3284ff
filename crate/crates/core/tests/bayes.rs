mod common;

use common::*;
use mixfx::bayes::*;
use mixfx::likelihood::total_loglik;
use mixfx::mle::{em_fit, Tolerances};
use mixfx::model::match_labels;
use mixfx::simulate::SubjectRng;
use mixfx::stats::{batch_means_mcse, ks_pvalue, ks_uniform, mean, std_dev};
use mixfx::{Chart, MixtureParams, ParamBox};
use nalgebra::{DMatrix, DVector};

#[test]
fn uniform_prior_cancels_in_differences() {
    let stats = ou_stats(&theta_two(), 50, 1);
    let bx = ParamBox::default();
    let a = theta_two();
    let b = MixtureParams::new(vec![0.3, 0.7], vec![-0.5, 1.5], vec![1.0, 0.2]);
    let dp = log_posterior(&stats, &a, &PriorSpec::Uniform, &bx).unwrap()
        - log_posterior(&stats, &b, &PriorSpec::Uniform, &bx).unwrap();
    let dl = total_loglik(&stats, &a).unwrap() - total_loglik(&stats, &b).unwrap();
    assert!((dp - dl).abs() < 1e-9 * dl.abs().max(1.0));
}

#[test]
fn support_and_preconditions() {
    let stats = ou_stats(&theta_two(), 20, 1);
    let bx = ParamBox::default();
    let out = MixtureParams::new(vec![0.4, 0.6], vec![-1.0, 6.0], vec![0.25, 0.5]);
    assert_eq!(log_posterior(&stats, &out, &PriorSpec::Uniform, &bx).unwrap(), f64::NEG_INFINITY);
    assert!(log_posterior(&[], &theta_two(), &PriorSpec::Uniform, &bx).is_err());
    let opts = McmcOptions { draws: 999, ..Default::default() };
    assert!(mh_sample(&stats, &PriorSpec::Uniform, &bx, &theta_two(), None, &opts).is_err());
}

fn prior_chain(m: usize, seed: u64) -> Chain {
    let bx = ParamBox::default();
    let init = if m == 1 {
        MixtureParams::single(0.0, 5.0)
    } else {
        MixtureParams::new(vec![0.5, 0.5], vec![0.0, 0.0], vec![5.0, 5.0])
    };
    let opts = McmcOptions { draws: 100_000, seed, use_likelihood: false, ..Default::default() };
    mh_sample(&[], &PriorSpec::Uniform, &bx, &init, None, &opts).unwrap()
}

/// p-values of thinned marginal draws against the uniform law on each edge.
fn prior_pvalues(chain: &Chain) -> Vec<f64> {
    let bx = ParamBox::default();
    let thinned: Vec<MixtureParams> = chain.post_burn_params().into_iter().step_by(320).collect();
    let n = thinned.len();
    let m = thinned[0].components();
    let a_hi = 1.0 - (m as f64 - 1.0) * bx.a_min;
    let mut out = Vec::new();
    for k in 0..m {
        if m > 1 {
            let xs: Vec<f64> = thinned.iter().map(|t| t.weights[k]).collect();
            out.push(ks_pvalue(ks_uniform(&xs, bx.a_min, a_hi), n));
        }
        let xs: Vec<f64> = thinned.iter().map(|t| t.mu[k]).collect();
        out.push(ks_pvalue(ks_uniform(&xs, bx.mu[0], bx.mu[1]), n));
        let xs: Vec<f64> = thinned.iter().map(|t| t.omega2[k]).collect();
        out.push(ks_pvalue(ks_uniform(&xs, bx.omega2[0], bx.omega2[1]), n));
    }
    out
}

#[test]
fn prior_only_chain_reproduces_the_uniform_prior() {
    let ok = (0..100).filter(|&s| prior_pvalues(&prior_chain(1, s)).iter().all(|p| *p >= 0.01)).count();
    assert!(ok >= 95, "{ok}/100");
    let pv: Vec<f64> = (0..100).flat_map(|s| prior_pvalues(&prior_chain(2, 500 + s))).collect();
    let ok = pv.iter().filter(|p| **p >= 0.01).count() as f64 / pv.len() as f64;
    assert!(ok >= 0.95, "{ok}");
}

fn posterior_setup(n: usize, seed: u64) -> (Vec<mixfx::SuffStats>, mixfx::mle::FitResult) {
    let stats = ou_stats(&theta_two(), n, seed);
    let fit = em_fit(&stats, 2, &ParamBox::default(), &theta_two(), &Tolerances::default()).unwrap();
    (stats, fit)
}

#[test]
fn posterior_is_consistent_and_reproducible() {
    let (stats, fit) = posterior_setup(800, 40);
    let bx = ParamBox::default();
    let cov = fit.covariance().unwrap();
    let run = |seed| {
        let opts = McmcOptions { draws: 20_000, seed, ..Default::default() };
        mh_sample(&stats, &PriorSpec::Uniform, &bx, &fit.theta, Some(&cov), &opts).unwrap()
    };
    let (c1, c2) = (run(1), run(2));
    assert!(c1.flags.is_empty(), "{:?}", c1.flags);
    assert_ne!(c1.post_burn()[100], c2.post_burn()[100]);
    let theta0 = theta_two();
    for j in 0..5 {
        let x1: Vec<f64> = c1.post_burn().iter().map(|x| x[j]).collect();
        let x2: Vec<f64> = c2.post_burn().iter().map(|x| x[j]).collect();
        let se = (batch_means_mcse(&x1).powi(2) + batch_means_mcse(&x2).powi(2)).sqrt();
        assert!((mean(&x1) - mean(&x2)).abs() <= 3.0 * se, "coordinate {j}");
    }
    // posterior mean in natural coordinates, labels matched to theta0
    let draws: Vec<Vec<f64>> =
        c1.post_burn_params().iter().map(|t| match_labels(t, &theta0).unwrap().to_vec()).collect();
    let truth = theta0.to_vec();
    for j in 0..truth.len() {
        let xs: Vec<f64> = draws.iter().map(|d| d[j]).collect();
        assert!((mean(&xs) - truth[j]).abs() <= 3.0 * std_dev(&xs), "coordinate {j}");
    }
}

#[test]
fn psi_transform_centering_and_whitening() {
    let theta_hat = theta_two();
    let info = DMatrix::from_fn(5, 5, |i, j| if i == j { 4.0 } else { 0.5 });
    let p = psi_transform(std::slice::from_ref(&theta_hat), &theta_hat, &info, 0.01).unwrap();
    assert!(p.psi[0].iter().all(|v| v.abs() < 1e-12));
    let other = MixtureParams::new(vec![0.35, 0.65], vec![-0.9, 2.2], vec![0.3, 0.45]);
    let id = psi_transform(std::slice::from_ref(&other), &theta_hat, &DMatrix::identity(5, 5), 0.01).unwrap();
    let chart = Chart::new(2, 0.01);
    let diff = DVector::from_vec(chart.from_params(&other)) - DVector::from_vec(chart.from_params(&theta_hat));
    for j in 0..5 {
        assert!((id.psi[0][j] - diff[j]).abs() < 1e-12);
    }
    assert!(!id.identity_fallback);
    let bad = psi_transform(&[other], &theta_hat, &DMatrix::zeros(5, 5), 0.01).unwrap();
    assert!(bad.identity_fallback);
}

#[test]
fn normality_report_on_synthetic_draws() {
    let mut rng = SubjectRng::new(3, 0);
    let normal = PsiDraws {
        psi: (0..4000).map(|_| (0..5).map(|_| rng.standard_normal()).collect()).collect(),
        identity_fallback: false,
    };
    let r = posterior_normality_report(&normal, &NormalityThresholds::default());
    assert!(r.pass, "{r:?}");
    // Student t with 3 degrees of freedom
    let t3 = PsiDraws {
        psi: (0..4000)
            .map(|_| {
                (0..5)
                    .map(|_| {
                        let z = rng.standard_normal();
                        let chi: f64 = (0..3).map(|_| rng.standard_normal().powi(2)).sum();
                        z / (chi / 3.0).sqrt()
                    })
                    .collect()
            })
            .collect(),
        identity_fallback: false,
    };
    let r = posterior_normality_report(&t3, &NormalityThresholds::default());
    assert!(r.coords.iter().all(|c| c.kurtosis_flag));
    assert!(!r.pass);
}

#[test]
fn gaussian_draws_around_the_estimate_pass() {
    let (_, fit) = posterior_setup(400, 41);
    let cov = fit.covariance().unwrap();
    let l = cov.clone().cholesky().unwrap().l();
    let chart = Chart::new(2, 0.01);
    let center = DVector::from_vec(chart.from_params(&fit.theta));
    let mut rng = SubjectRng::new(5, 0);
    let draws: Vec<MixtureParams> = (0..4000)
        .map(|_| {
            let z = DVector::from_fn(5, |_, _| rng.standard_normal());
            chart.to_params((&center + &l * z).as_slice())
        })
        .collect();
    let psi = psi_transform(&draws, &fit.theta, &fit.observed_info_matrix(), 0.01).unwrap();
    let r = posterior_normality_report(&psi, &NormalityThresholds::default());
    assert!(r.pass, "{r:?}");
}
