//! Simulate a small Ornstein-Uhlenbeck cohort with mixture random effects
//! and reduce each path to its sufficient statistics.

use mixfx::simulate::simulate_cohort;
use mixfx::suffstats::batch_suffstats;
use mixfx::{MixtureParams, SdeModel, SubjectDesign};

fn main() -> mixfx::Result<()> {
    let model = SdeModel::linear();
    let theta = MixtureParams::new(vec![0.4, 0.6], vec![-1.0, 2.0], vec![0.25, 0.5]);
    let designs = vec![SubjectDesign::new(3.0, 1.0); 8];
    let cohort = simulate_cohort(&model, &theta, &designs, 1e-3, 42)?;
    let stats = batch_suffstats(&cohort, &model)?;

    println!("subject  z      phi        U          V       U/V");
    for (i, s) in stats.iter().enumerate() {
        println!(
            "{i:>7} {:>2} {:>8.3} {:>10.3} {:>10.3} {:>8.3}",
            cohort.labels[i] + 1,
            cohort.effects[i],
            s.u,
            s.v,
            s.ratio()
        );
    }
    let p = &cohort.paths[0];
    println!(
        "\nsubject 0: {} grid points, X(0) = {}, X(T) = {:.4}",
        p.values.len(),
        p.values[0],
        p.values.last().unwrap()
    );
    Ok(())
}
