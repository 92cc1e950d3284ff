//! Maximum likelihood by multistart ECM, cross-checked against direct BFGS
//! maximization, with Wald standard errors from the observed information.

use mixfx::mle::{multistart_direct_fit, multistart_fit, Tolerances};
use mixfx::simulate::simulate_stats_cohort;
use mixfx::{MixtureParams, ParamBox, SdeModel, SubjectDesign};

fn main() -> mixfx::Result<()> {
    let theta0 = MixtureParams::new(vec![0.4, 0.6], vec![-1.0, 2.0], vec![0.25, 0.5]);
    let designs = vec![SubjectDesign::new(3.0, 1.0); 800];
    let stats = simulate_stats_cohort(&SdeModel::linear(), &theta0, &designs, 1e-3, 2024)?.stats;
    let bx = ParamBox::default();
    let tol = Tolerances::tight();

    let em = multistart_fit(&stats, 2, &bx, 10, 1, &tol, &[])?;
    let fit = &em.best;
    println!(
        "ECM: loglik {:.6} after {} sweeps ({}), best of {} restarts",
        fit.loglik,
        fit.iterations,
        fit.reason,
        em.restart_logliks.len()
    );
    println!("  weights {:.4?}", fit.theta.weights);
    println!("  mu      {:.4?}", fit.theta.mu);
    println!("  omega2  {:.4?}", fit.theta.omega2);

    if let Some(cov) = fit.covariance() {
        let se: Vec<f64> = cov.diagonal().iter().map(|v| v.sqrt()).collect();
        println!("  chart standard errors {se:.4?}");
    }

    let direct = multistart_direct_fit(&stats, 2, &bx, 10, 1, &tol)?.best;
    println!("BFGS: loglik {:.6}, |loglik difference| {:.1e}", direct.loglik, (direct.loglik - fit.loglik).abs());
    Ok(())
}
