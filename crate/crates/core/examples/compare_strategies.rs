//! Runs every strategy on the same scenario and seeds and writes the
//! comparison table with per-run artifacts.
//!
//! cargo run --release --example compare_strategies -- heterogeneous-130-50-20 /tmp/cmp

use fedsim::cli::compare_scenarios;
use fedsim::scenario::parse_scenario;
use fedsim::StrategyKind;
use std::path::{Path, PathBuf};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "heterogeneous-130-50-20".into());
    let out: PathBuf = args.next().unwrap_or_else(|| "target/compare".into()).into();
    let mut scenarios = parse_scenario(Path::new(&name))?;
    scenarios.truncate(3);

    let cmp = compare_scenarios(&scenarios, &StrategyKind::ALL, &out)?;
    print!("{}", cmp.table);
    println!("{} runs written under {}", cmp.runs.len(), out.display());
    Ok(())
}
