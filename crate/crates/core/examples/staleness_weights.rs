//! Prints the two staleness damping rules and aggregates a mix of current
//! and stale updates with each.

use fedsim::aggregation::{
    aggregate_stale, staleness_weight_inverse_sqrt, staleness_weight_linear, weighted_fedavg, StalenessPolicy,
};
use fedsim::{ClientId, ModelParams, UpdateRecord};

fn update(client: u32, origin: u64, cardinality: u32, params: Vec<f64>) -> UpdateRecord {
    UpdateRecord {
        client: ClientId(client),
        origin_round: origin,
        params: ModelParams(params),
        cardinality,
        arrival_time: 0.0,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let round = 10;
    println!("staleness  linear(t/T)  inverse-sqrt");
    for s in 0..=6u64 {
        let linear = staleness_weight_linear(round - s, round)?;
        let isqrt = staleness_weight_inverse_sqrt(round - s, round)?;
        println!("{s:>9}  {linear:>11.4}  {isqrt:>12.4}");
    }

    let updates = vec![
        update(0, 10, 100, vec![1.0, 1.0]),
        update(1, 10, 300, vec![2.0, 0.0]),
        update(2, 8, 200, vec![-1.0, 4.0]),
        update(3, 4, 400, vec![9.0, 9.0]),
    ];
    println!("\nfedavg (ignores staleness): {:?}", weighted_fedavg(&updates)?.0);
    for (name, policy) in [
        ("linear, tau 2", StalenessPolicy::linear()),
        ("inverse-sqrt, horizon 5", StalenessPolicy::inverse_sqrt()),
        ("inverse-sqrt, renormalized", StalenessPolicy::inverse_sqrt().renormalized()),
    ] {
        let w = aggregate_stale(&updates, round, &policy)?;
        println!("{name:<27} {:?}", w.0);
    }
    Ok(())
}
