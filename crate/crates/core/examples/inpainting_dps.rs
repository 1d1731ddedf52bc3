//! Box inpainting with gradient steps on the plain (non-update) steps of
//! the trajectory, compared against the same run without them.
//!
//!     cargo run --release -p treg --example inpainting_dps [OUT_DIR]

use std::path::{Path, PathBuf};

use treg::harness::config::RunConfig;
use treg::harness::{io, metrics, Workspace};
use treg::sampler::{self, SolverConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| root.join("out/examples/inpaint"));
    std::fs::create_dir_all(&out)?;
    let ws = Workspace::build(RunConfig::load(&root.join("configs/inpaint.cfg"))?)?;
    let truth = ws.truth.as_deref().expect("inpaint.cfg names a truth");
    let concept = ws.config.experiment.concept.clone();

    for dps in [true, false] {
        let cfg = SolverConfig { dps_enabled: dps, ..ws.config.solver.clone() };
        let run = sampler::run(&cfg, &ws.problem(), &ws.measurement, concept.as_deref())?;
        let psnr = metrics::psnr(&run.x_final, truth, 1.0)?;
        let y_mse = metrics::y_mse(&ws.op, &run.x_final, &ws.measurement.y)?;
        let name = if dps { "dps" } else { "plain" };
        io::write_pgm(&out.join(format!("recon_{name}.pgm")), &run.x_final, 32, 32)?;
        println!("{name:>5}: psnr {psnr:6.2} dB  y-mse {y_mse:.5}");
    }
    Ok(())
}
