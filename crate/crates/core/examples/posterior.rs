//! Random-walk Metropolis-Hastings on the posterior, then the whitened
//! statistic Psi_n checked against the standard normal.

use mixfx::bayes::{mh_sample, posterior_normality_report, psi_transform, McmcOptions, NormalityThresholds, PriorSpec};
use mixfx::mle::{multistart_fit, Tolerances};
use mixfx::simulate::simulate_stats_cohort;
use mixfx::{MixtureParams, ParamBox, SdeModel, SubjectDesign};

fn main() -> mixfx::Result<()> {
    let theta0 = MixtureParams::single(1.0, 1.0);
    let designs = vec![SubjectDesign::new(3.0, 1.0); 400];
    let stats = simulate_stats_cohort(&SdeModel::linear(), &theta0, &designs, 1e-3, 5)?.stats;
    let bx = ParamBox::default();
    let fit = multistart_fit(&stats, 1, &bx, 3, 1, &Tolerances::default(), &[])?.best;

    let opts = McmcOptions { draws: 50_000, seed: 9, ..McmcOptions::default() };
    let chain = mh_sample(&stats, &PriorSpec::Uniform, &bx, &fit.theta, fit.covariance().as_ref(), &opts)?;
    println!(
        "acceptance {:.3} (burn-in {:.3}), proposal scale {:.3}, flags {:?}",
        chain.acceptance_rate, chain.burn_in_acceptance, chain.scale, chain.flags
    );

    let draws = chain.post_burn_params();
    let n = draws.len() as f64;
    let mean_mu = draws.iter().map(|t| t.mu[0]).sum::<f64>() / n;
    let mean_w = draws.iter().map(|t| t.omega2[0]).sum::<f64>() / n;
    println!("MLE       mu {:.4}  omega2 {:.4}", fit.theta.mu[0], fit.theta.omega2[0]);
    println!("posterior mu {mean_mu:.4}  omega2 {mean_w:.4}");

    let psi = psi_transform(&draws, &fit.theta, &fit.observed_info_matrix(), bx.a_min)?;
    // A fixed cap: the default critical value assumes independent draws.
    let thresholds = NormalityThresholds { ks_max: Some(0.08), ..NormalityThresholds::default() };
    let report = posterior_normality_report(&psi, &thresholds);
    println!("{:<14} {:>7} {:>9} {:>9}", "Psi coordinate", "KS", "skewness", "kurtosis");
    for c in &report.coords {
        println!("{:<14} {:>7.4} {:>9.4} {:>9.4}", c.label, c.ks, c.skewness, c.excess_kurtosis);
    }
    println!("normality pass: {}", report.pass);
    Ok(())
}
