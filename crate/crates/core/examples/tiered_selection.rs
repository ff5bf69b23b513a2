//! Clusters clients by training time and missed rounds, then runs the
//! tiered selection used by the clustering-based baseline.

use fedsim::clustering::{calinski_harabasz, dbscan, default_epsilon_grid, select_epsilon, standardize};
use fedsim::model::{ClientHistory, ClientProfile, HardwareClass};
use fedsim::strategy::fedlesscan::{select_clients_fedlesscan, FedLesScanConfig};
use fedsim::ClientId;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Three groups: fast and reliable, slow, and frequently missing.
    let features: Vec<[f64; 2]> = (0..12)
        .map(|i| match i % 3 {
            0 => [20.0 + i as f64, 0.0],
            1 => [180.0 + i as f64, 0.2],
            _ => [60.0 + i as f64, 4.0],
        })
        .collect();
    let scaled = standardize(&features);
    let grid = default_epsilon_grid(&scaled, 20);
    let choice = select_epsilon(&scaled, &grid, 2)?;
    let labels = choice.labels;
    println!("epsilon {:.3}: labels {labels:?}", choice.epsilon);
    println!("calinski-harabasz {:.2}", calinski_harabasz(&scaled, &labels)?);
    println!("fixed epsilon 0.5: {:?}", dbscan(&scaled, 0.5, 2)?);

    let pool: Vec<ClientProfile> = (0..12)
        .map(|i| ClientProfile {
            id: ClientId(i),
            hardware: HardwareClass::new("cpu", 1.0, 0.0, 0.00002),
            cardinality: 100,
            batch_size: 10,
            epochs: 1,
            dropout_prob: 0.0,
            slow_factor: 0.0,
        })
        .collect();
    let histories: Vec<ClientHistory> = features
        .iter()
        .enumerate()
        .map(|(i, f)| ClientHistory {
            durations: vec![f[0]],
            missed_rounds: if f[1] > 1.0 { vec![3, 4] } else { vec![] },
            cooldown: if i == 2 { 2 } else { 0 },
            invocation_count: 2,
            ..Default::default()
        })
        .collect();
    let cfg = FedLesScanConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for round in [5, 40] {
        let picked = select_clients_fedlesscan(&pool, &histories, 4, round, 50, 300.0, &cfg, &mut rng)?;
        println!("round {round}: {picked:?}");
    }
    Ok(())
}
