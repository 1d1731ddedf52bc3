//! Numerical self-checks: closed-form posterior means against quadrature,
//! CG against dense solves, operator adjoints and gradients against finite
//! differences.
//!
//!     cargo run --release -p treg --example oracle_checks [SEED]

use std::path::Path;

use treg::harness::config::RunConfig;
use treg::harness::{validate, Workspace};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let ws = Workspace::build(RunConfig::load(&root.join("configs/deblur.cfg"))?)?;
    let outcomes = validate::run_all(seed, Some(&ws))?;
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(format!("{failed} suites failed").into());
    }
    Ok(())
}
