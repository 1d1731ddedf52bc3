//! Regenerates the shipped fixture files from their procedural definitions.
//!
//!     cargo run -p treg --example generate_fixtures [DIR]

use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
    for path in treg::fixtures::write_all(&dir)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
