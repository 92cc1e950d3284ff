//! A Monte Carlo consistency ladder from a JSON config. Defaults to the
//! bundled small config; pass a path to run another.

use mixfx::asymptotics::{run_experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| format!("{}/configs/consistency-small.json", env!("CARGO_MANIFEST_DIR")));
    let cfg: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    cfg.validate()?;
    let report = run_experiment(&cfg)?;

    for level in &report.levels {
        println!("n = {}", level.n);
        for (name, value) in &level.metrics {
            println!("  {name:<24} {value:.4}");
        }
    }
    for v in &report.verdicts {
        println!("{:<20} {:?} {}", v.name, v.status, v.detail);
    }
    println!("{:.2} s", report.runtime_secs);
    Ok(())
}
