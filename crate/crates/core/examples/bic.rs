//! Choosing the number of mixture components by BIC.

use mixfx::mle::{bic_select, Tolerances};
use mixfx::simulate::simulate_stats_cohort;
use mixfx::{MixtureParams, ParamBox, SdeModel, SubjectDesign};

fn main() -> mixfx::Result<()> {
    let theta0 = MixtureParams::new(vec![0.4, 0.6], vec![-1.0, 2.0], vec![0.25, 0.5]);
    let designs = vec![SubjectDesign::new(3.0, 1.0); 400];
    let stats = simulate_stats_cohort(&SdeModel::linear(), &theta0, &designs, 1e-3, 11)?.stats;

    let sel = bic_select(&stats, &[1, 2, 3, 4], &ParamBox::default(), 5, 3, &Tolerances::default())?;
    println!(" M      loglik         BIC  params");
    for r in &sel.rows {
        let mark = if r.m == sel.best { "  <-" } else { "" };
        println!("{:>2} {:>11.3} {:>11.3} {:>7}{mark}", r.m, r.loglik, r.bic, r.free_params);
    }
    Ok(())
}
