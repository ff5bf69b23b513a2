#![allow(dead_code)]

use fedsim::aggregation::StalenessPolicy;
use fedsim::model::{ClientHistory, ClientId, ClientProfile, HardwareClass, ModelParams, UpdateRecord};
use fedsim::scenario::{LearningRate, Scenario, StrategyParams, TaskParams};
use fedsim::task::TaskOptions;
use fedsim::StrategyKind;
use rand::Rng;

pub fn profile(id: u32, capacity: f64, cardinality: u32) -> ClientProfile {
    ClientProfile {
        id: ClientId(id),
        hardware: HardwareClass::new("cpu", capacity, 0.0, 0.00001),
        cardinality,
        batch_size: 10,
        epochs: 1,
        dropout_prob: 0.0,
        slow_factor: 0.0,
    }
}

pub fn scenario(clients: Vec<ClientProfile>, strategy: StrategyKind, k: usize, max_rounds: u64) -> Scenario {
    Scenario {
        name: "test".into(),
        seed: 1,
        clients,
        task: TaskParams {
            dim: 3,
            spread: 1.0,
            seed: 1,
            lr: LearningRate::RelativeToCurvature(0.1),
            options: TaskOptions::default(),
        },
        strategy,
        params: StrategyParams::default(),
        clients_per_round: k,
        max_rounds,
        target: None,
        round_timeout: 600.0,
        idle_threshold: 600.0,
        per_invocation_cost: 4e-7,
    }
}

pub fn random_history<R: Rng>(rng: &mut R, max_len: usize) -> ClientHistory {
    let len = rng.random_range(1..=max_len);
    ClientHistory {
        durations: (0..len).map(|_| rng.random_range(0.5..500.0)).collect(),
        booster: 1.2f64.powi(rng.random_range(0..6)),
        invocation_count: len as u64,
        ..Default::default()
    }
}

pub fn update(origin: u64, cardinality: u32, params: Vec<f64>) -> UpdateRecord {
    UpdateRecord {
        client: ClientId(0),
        origin_round: origin,
        params: ModelParams(params),
        cardinality,
        arrival_time: 0.0,
    }
}

pub fn literal_policies() -> [StalenessPolicy; 2] {
    [StalenessPolicy::linear(), StalenessPolicy::inverse_sqrt()]
}
