//! Fisher information at the truth by Monte Carlo: the outer product of
//! scores against the negative Hessian, and the observed information at the
//! MLE.

use mixfx::mle::{expected_info_mc, multistart_fit, Tolerances};
use mixfx::simulate::simulate_stats_cohort;
use mixfx::{MixtureParams, ParamBox, SdeModel, SubjectDesign};

fn main() -> mixfx::Result<()> {
    let theta0 = MixtureParams::new(vec![0.4, 0.6], vec![-1.0, 2.0], vec![0.25, 0.5]);
    let design = SubjectDesign::new(3.0, 1.0);
    let bx = ParamBox::default();

    let info = expected_info_mc(&theta0, &SdeModel::linear(), &design, 50_000, 1e-3, 3, bx.a_min)?;
    let gap = (&info.score_outer - &info.neg_hessian).norm() / info.score_outer.norm();
    println!("per-subject E[g g'] {:.3}", info.score_outer);
    println!("relative gap to E[-H]: {gap:.4}");

    let n = 800;
    let stats = simulate_stats_cohort(&SdeModel::linear(), &theta0, &vec![design; n], 1e-3, 4)?.stats;
    let fit = multistart_fit(&stats, 2, &bx, 5, 1, &Tolerances::default(), &[])?.best;
    let observed = fit.observed_info_matrix() / n as f64;
    println!("observed information / n at the MLE {observed:.3}");
    Ok(())
}
