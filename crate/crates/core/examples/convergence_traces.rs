//! Per-step diagnostics of one run: data consistency of the guided pivot on
//! update steps and the denoising loss along the whole trajectory.
//!
//!     cargo run --release -p treg --example convergence_traces

use std::path::Path;

use treg::harness::config::RunConfig;
use treg::harness::Workspace;
use treg::sampler::{self, Branch};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let ws = Workspace::build(RunConfig::load(&root.join("configs/convergence.cfg"))?)?;
    let concept = ws.config.experiment.concept.clone();
    let run = sampler::run(&ws.config.solver, &ws.problem(), &ws.measurement, concept.as_deref())?;

    println!("{:>5} {:>6} {:>14} {:>12}", "t", "branch", "consistency", "dsm");
    for r in run.trace.records.iter().step_by(10) {
        println!("{:>5} {:>6} {:>14.4} {:>12.4}", r.t, r.branch.as_str(), r.data_consistency, r.dsm_loss);
    }
    let gamma: Vec<f64> = run.trace.gamma_records().map(|r| r.data_consistency).collect();
    let updates = run.trace.records.iter().filter(|r| r.branch == Branch::Gamma).count();
    println!(
        "{updates} update steps, consistency {:.3} -> {:.3}",
        gamma.first().copied().unwrap_or(f64::NAN),
        gamma.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}
