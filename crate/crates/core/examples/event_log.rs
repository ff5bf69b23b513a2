//! Writes run artifacts to a directory, reads the event log back and
//! recomputes every summary metric from it.

use fedsim::cli::{read_events, recompute_summary, write_artifacts};
use fedsim::metrics::rounds_from_events;
use fedsim::scenario::bundled;
use fedsim::simulate;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "target/event-log".into());
    let scenario = bundled("straggler-30pct")?.remove(0);
    let result = simulate(&scenario)?;
    let artifacts = write_artifacts(&result, dir.as_ref())?;

    let events = read_events(&artifacts.dir.join("events.jsonl"))?;
    let rounds = rounds_from_events(&events)?;
    let recomputed = recompute_summary(&artifacts.dir)?;
    println!("{} events, {} rounds in {}", events.len(), rounds.len(), artifacts.dir.display());
    println!("summary reproduced from the log: {}", recomputed == result.summary);
    for r in rounds.iter().take(5) {
        println!(
            "round {}: {} selected, {} used, {} cold, eur {:.2}",
            r.round,
            r.selected,
            r.successful,
            r.cold,
            r.eur().unwrap_or(0.0)
        );
    }
    Ok(())
}
