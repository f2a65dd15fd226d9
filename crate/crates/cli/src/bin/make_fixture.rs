//! Writes the bundled synthetic dataset.
//!
//! Usage: `make-fixture [OUT_DIR] [SEED]` (defaults: `data`, the fixture seed).

use std::path::PathBuf;

use esgval_cli::synthetic::{generate, DEFAULT_SEED};

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let seed = match args.next() {
        Some(s) => s.parse().map_err(|e| std::io::Error::other(format!("bad seed '{s}': {e}")))?,
        None => DEFAULT_SEED,
    };
    let f = generate(seed);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("prices.csv"), f.prices)?;
    std::fs::write(dir.join("esg.csv"), f.esg)?;
    std::fs::write(dir.join("yields.csv"), f.yields)?;
    std::fs::write(dir.join("index_weights.csv"), f.index_weights)?;
    println!("wrote fixture (seed {seed}) to {}", dir.display());
    Ok(())
}
