//! The null embedding is pushed away from the running reconstruction. Shows
//! the similarity before and after each update and what switching the
//! update off does to an unconditioned run.
//!
//!     cargo run --release -p treg --example adaptive_negation

use std::path::Path;

use treg::harness::config::RunConfig;
use treg::harness::{experiments, metrics, Workspace};
use treg::sampler::{self, SolverConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let ws = Workspace::build(RunConfig::load(&root.join("configs/deblur.cfg"))?)?;
    println!("initial null weights {:?}", ws.embedding.null_weights());

    for enabled in [true, false] {
        let cfg = SolverConfig { negation_enabled: enabled, ..ws.config.solver.clone() };
        let run = sampler::run(&cfg, &ws.problem(), &ws.measurement, None)?;
        println!("negation {}: {} updates", if enabled { "on " } else { "off" }, run.negation.len());
        for ev in run.negation.iter().step_by(20) {
            println!("  t={:>4}  similarity {:+.4} -> {:+.4}", ev.t, ev.step.before, ev.step.after);
        }
        let mode = experiments::nearest_concept(&ws, &run.z_final);
        let y_mse = metrics::y_mse(&ws.op, &run.x_final, &ws.measurement.y)?;
        println!("  nearest concept {}  y-mse {y_mse:.5}", ws.prior.concepts()[mode].label);
    }
    Ok(())
}
