//! Sweeps the concurrency ratio on the heterogeneous pool and prints the
//! time to target per seed.

use fedsim::cli::apply_param;
use fedsim::scenario::bundled;
use fedsim::{simulate, StrategyKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenarios = bundled("heterogeneous-130-50-20")?;
    let ratios = [0.3, 0.6, 0.8];
    println!("seed  {}", ratios.map(|r| format!("CR {r:<6}")).join(" "));
    for base in &scenarios {
        let base = base.with_strategy(StrategyKind::Apodotiko);
        let mut cells = Vec::new();
        for r in ratios {
            let s = apply_param(&base, "concurrency_ratio", r)?;
            let t = simulate(&s)?.summary.time_to_target;
            cells.push(t.map(|t| format!("{t:>9.1}")).unwrap_or_else(|| format!("{:>9}", "-")));
        }
        println!("{:>4}  {}", base.seed, cells.join(" "));
    }
    Ok(())
}
