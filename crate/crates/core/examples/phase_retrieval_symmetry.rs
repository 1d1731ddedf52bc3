//! Fourier phase retrieval cannot tell an image from its 180-degree rotation.
//! The upright prompt resolves the flip; the unconditioned arm does not.
//!
//!     cargo run --release -p treg --example phase_retrieval_symmetry [RESTARTS]

use std::path::Path;

use treg::harness::config::{ExperimentKind, RunConfig};
use treg::harness::experiments::{self, Aggregate, Arm};
use treg::harness::Workspace;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let mut cfg = RunConfig::load(&root.join("configs/symmetry.cfg"))?;
    cfg.experiment.restarts = std::env::args().nth(1).map(|n| n.parse()).transpose()?.unwrap_or(8);
    let ws = Workspace::build(cfg)?;
    let out = root.join("out/examples/symmetry");
    let report = experiments::run_experiment(ExperimentKind::Symmetry, &ws, &out)?;

    if let Aggregate::Symmetry { operator_symmetry_error, .. } = &report.aggregate {
        println!("max |A(x) - A(flip(x))| = {operator_symmetry_error:.2e}");
    }
    for arm in [Arm::Conditioned, Arm::Unconditioned] {
        let s = report.arm(arm).expect("both arms run");
        println!("{:>13}: {:?}  (reference fraction {:.2})", arm.as_str(), s.class_counts, s.target_fraction);
    }
    Ok(())
}
