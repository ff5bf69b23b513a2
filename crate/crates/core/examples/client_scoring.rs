//! Scores a small pool by observed efficiency and draws a few selections,
//! showing how boosters lift clients that keep being passed over.

use fedsim::model::{ClientHistory, ClientProfile, HardwareClass};
use fedsim::strategy::apodotiko::{calculate_score, normalize_scores, select_clients, ApodotikoConfig};
use fedsim::ClientId;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ApodotikoConfig::default();
    let capacities = [0.25, 0.25, 0.5, 0.5, 2.5, 2.5];
    let pool: Vec<ClientProfile> = capacities
        .iter()
        .enumerate()
        .map(|(i, &cap)| ClientProfile {
            id: ClientId(i as u32),
            hardware: HardwareClass::new("fn", cap, 5.0, 0.00002),
            cardinality: 200,
            batch_size: 10,
            epochs: 2,
            dropout_prob: 0.0,
            slow_factor: 0.0,
        })
        .collect();
    let mut histories: Vec<ClientHistory> = pool
        .iter()
        .map(|p| ClientHistory {
            durations: vec![p.work_units() as f64 / p.hardware.cef_capacity],
            invocation_count: 1,
            ..Default::default()
        })
        .collect();

    let scores = pool
        .iter()
        .zip(&histories)
        .map(|(p, h)| calculate_score(h, p, &cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let (_, probs) = normalize_scores(&scores)?;
    for (p, (s, q)) in pool.iter().zip(scores.iter().zip(&probs)) {
        println!("client {} capacity {:>4}: score {s:>8.1}  p {q:.3}", p.id, p.hardware.cef_capacity);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for round in 1..=6 {
        let picked = select_clients(&pool, &mut histories, 2, &cfg, &mut rng)?;
        let boosters: Vec<String> = histories.iter().map(|h| format!("{:.2}", h.booster)).collect();
        println!("round {round}: picked {picked:?}, boosters [{}]", boosters.join(", "));
    }
    Ok(())
}
