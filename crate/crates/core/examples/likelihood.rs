//! Per-subject mixture likelihood, the cohort log-likelihood and its
//! analytic derivatives in the unconstrained chart.

use mixfx::likelihood::{grad_hess_loglik, log_lambda, responsibilities, total_loglik};
use mixfx::simulate::simulate_stats_cohort;
use mixfx::{MixtureParams, ParamBox, SdeModel, SubjectDesign};

fn main() -> mixfx::Result<()> {
    let theta = MixtureParams::new(vec![0.4, 0.6], vec![-1.0, 2.0], vec![0.25, 0.5]);
    let designs = vec![SubjectDesign::new(3.0, 1.0); 200];
    let stats = simulate_stats_cohort(&SdeModel::linear(), &theta, &designs, 1e-3, 7)?.stats;

    let s = &stats[0];
    println!("subject 0: U = {:.4}, V = {:.4}", s.u, s.v);
    println!("  log lambda       = {:.6}", log_lambda(s, &theta)?);
    println!("  responsibilities = {:?}", responsibilities(s, &theta));

    let mut shifted = theta.clone();
    shifted.mu.iter_mut().for_each(|m| *m += 0.5);
    println!("\ncohort log-likelihood at theta0 = {:.4}", total_loglik(&stats, &theta)?);
    println!("cohort log-likelihood, mu + 0.5 = {:.4}", total_loglik(&stats, &shifted)?);

    let g = grad_hess_loglik(&stats, &theta, &ParamBox::default())?;
    println!("\ngradient (eta, mu_1, mu_2, log w_1, log w_2): {:.3}", g.gradient.transpose());
    println!("Hessian diagonal: {:.3}", g.hessian.diagonal().transpose());
    Ok(())
}
