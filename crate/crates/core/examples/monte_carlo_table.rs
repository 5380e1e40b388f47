//! Coverage of robust and price-exposure intervals over a grid of panel sizes.
//!
//! Usage: `cargo run --release --example monte_carlo_table -- [replications]`
//!
//! Runs the bundled scenario-1 table (N = 1000, growing T) with a reduced
//! replication count so it finishes quickly.

use pexposure::config::TableConfig;
use pexposure::montecarlo::{format_table, run_table};

fn main() -> pexposure::Result<()> {
    let reps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/table1.toml");
    let cfg = TableConfig::load(path.as_ref())?;
    let mut rows = cfg.scenarios(None)?;
    for r in &mut rows {
        r.replications = reps;
    }
    let report = run_table(&rows)?;
    print!("{}", format_table(&report));
    Ok(())
}
