//! Restart study on the ambiguous deblurring problem: with the concept prompt
//! every restart lands in the target mode, without it restarts scatter
//! across the two stripe orientations.
//!
//!     cargo run --release -p treg --example ambiguity [RESTARTS]

use std::path::Path;

use treg::harness::config::{ExperimentKind, RunConfig};
use treg::harness::experiments::{self, Arm};
use treg::harness::Workspace;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let mut cfg = RunConfig::load(&root.join("configs/ambiguity.cfg"))?;
    if let Some(n) = std::env::args().nth(1) {
        cfg.experiment.restarts = n.parse()?;
    }
    let ws = Workspace::build(cfg)?;
    let out = root.join("out/examples/ambiguity");
    let report = experiments::run_experiment(ExperimentKind::Ambiguity, &ws, &out)?;

    for arm in [Arm::Conditioned, Arm::Unconditioned] {
        let s = report.arm(arm).expect("both arms run");
        println!(
            "{:>13}: modes {:?}  target fraction {:.2}  mean pixel variance {:.5}",
            arm.as_str(),
            s.class_counts,
            s.target_fraction,
            s.mean_pixel_variance.unwrap_or(f64::NAN),
        );
    }
    println!("report in {}", out.join("report.json").display());
    Ok(())
}
