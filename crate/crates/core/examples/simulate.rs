//! Simulates one bundled scenario (or a scenario file) and prints the
//! summary and the first events of the log.
//!
//! cargo run --example simulate -- heterogeneous-130-50-20 fedavg

use fedsim::scenario::parse_scenario;
use fedsim::{simulate, StrategyKind};
use std::path::Path;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "homogeneous".into());
    let mut scenario = parse_scenario(Path::new(&name))?.remove(0);
    if let Some(strategy) = args.next() {
        scenario.strategy = strategy.parse::<StrategyKind>()?;
    }

    let result = simulate(&scenario)?;
    for e in result.events.iter().take(8) {
        println!("{}", e.to_json_line());
    }
    let s = &result.summary;
    println!("...\n{} on {} (seed {})", scenario.strategy, scenario.name, scenario.seed);
    println!("  loss {:.6e} -> {:.6e} (optimum {:.6e})", s.initial_loss, s.final_loss, s.optimum_loss);
    match s.time_to_target {
        Some(t) => println!("  target reached after {t:.1}s"),
        None => println!("  target not reached"),
    }
    println!("  {} rounds, {} aggregations, {} invocations ({} missed)", s.rounds, s.aggregations, s.dispatches, s.misses);
    println!("  cost {:.4}, cold starts {:.3}, selection spread {}", s.cost, s.cold_start_ratio, s.bias);
    Ok(())
}
