//! Non-identical designs: starting points and horizons converging
//! harmonically to a limit design, with running averages of the per-design
//! KL divergence and information compared to their limits.

use mixfx::asymptotics::{empirical_kl_info_limits, DesignMode, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = format!("{}/configs/noniid-limits.json", env!("CARGO_MANIFEST_DIR"));
    let mut cfg: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    cfg.ladder = vec![20, 80];
    cfg.replicates = 10;

    let mode = DesignMode::Noniid { x1: 1.0, x_inf: 3.0, t1: 2.0, t_inf: 1.0 };
    for k in [1, 2, 10, 100] {
        println!("design {k}: {:?}", mode.design(k));
    }
    cfg.design = mode;
    cfg.validate()?;

    let report = empirical_kl_info_limits(&cfg)?;
    for level in &report.levels {
        println!("n = {}: {:.4?}", level.n, level.metrics);
    }
    for v in &report.verdicts {
        println!("{:<22} {:?} {}", v.name, v.status, v.detail);
    }
    Ok(())
}
