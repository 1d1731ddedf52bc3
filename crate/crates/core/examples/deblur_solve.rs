//! Text-regularized deblurring on the ambiguity fixture, compared seed for
//! seed against the same runs with text conditioning switched off.
//!
//!     cargo run --release -p treg --example deblur_solve [OUT_DIR]

use std::path::{Path, PathBuf};

use treg::harness::config::RunConfig;
use treg::harness::{experiments, io, metrics, Workspace};
use treg::sampler::{self, SolverConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| root.join("out/examples/deblur"));
    std::fs::create_dir_all(&out)?;

    let ws = Workspace::build(RunConfig::load(&root.join("configs/deblur.cfg"))?)?;
    let truth = ws.truth.as_deref().expect("deblur.cfg names a truth");
    let concept = ws.config.experiment.concept.clone();
    io::write_pgm(&out.join("truth.pgm"), truth, 32, 32)?;
    io::write_pgm(&out.join("measurement.pgm"), &ws.measurement.y, 32, 32)?;

    for seed in 0..5 {
        for (name, c) in [("text", concept.as_deref()), ("null", None)] {
            let cfg = SolverConfig { seed, ..ws.config.solver.clone() };
            let run = sampler::run(&cfg, &ws.problem(), &ws.measurement, c)?;
            let psnr = metrics::psnr(&run.x_final, truth, 1.0)?;
            let y_mse = metrics::y_mse(&ws.op, &run.x_final, &ws.measurement.y)?;
            let mode = &ws.prior.concepts()[experiments::nearest_concept(&ws, &run.z_final)].label;
            io::write_pgm(&out.join(format!("recon_{name}_{seed}.pgm")), &run.x_final, 32, 32)?;
            println!("seed {seed} {name:>4}: {mode:<10} psnr {psnr:6.2} dB  y-mse {y_mse:.5}");
        }
    }
    println!("images in {}", out.display());
    Ok(())
}
