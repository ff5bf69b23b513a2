//! Client-selection and aggregation policies.

pub mod apodotiko;
pub mod baselines;
pub mod fedlesscan;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::aggregation::AggregationError;
use crate::clustering::ClusterError;
use crate::model::{ClientHistory, ClientId};

pub use apodotiko::ApodotikoConfig;
pub use baselines::{FedBuffConfig, SyncConfig};
pub use fedlesscan::FedLesScanConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("clients per round must be at least 1")]
    InvalidClientsPerRound,
    #[error("no available clients to select from")]
    NoAvailableClients,
    #[error("client {0} has no recorded training duration")]
    NoHistory(ClientId),
    #[error("duration history is empty")]
    EmptyHistory,
    #[error("score list is empty")]
    EmptyScores,
    #[error("scores must be positive and finite, got {0}")]
    NonPositiveScore(f64),
    #[error("invalid round {round} (limit {limit})")]
    InvalidRound { round: u64, limit: u64 },
    #[error("round {0} is not in the missed-rounds list")]
    RoundNotMissed(u64),
    #[error("invalid strategy configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    FedAvg,
    FedProx,
    FedLesScan,
    FedBuff,
    Apodotiko,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::FedAvg,
        StrategyKind::FedProx,
        StrategyKind::FedLesScan,
        StrategyKind::FedBuff,
        StrategyKind::Apodotiko,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::FedAvg => "fedavg",
            StrategyKind::FedProx => "fedprox",
            StrategyKind::FedLesScan => "fedlesscan",
            StrategyKind::FedBuff => "fedbuff",
            StrategyKind::Apodotiko => "apodotiko",
        }
    }

    /// Round-based strategies that wait for every selected client or the
    /// round timeout before aggregating.
    pub fn is_synchronous(self) -> bool {
        matches!(
            self,
            StrategyKind::FedAvg | StrategyKind::FedProx | StrategyKind::FedLesScan
        )
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

/// Ids of clients that are not currently running.
pub fn available_clients(histories: &[ClientHistory]) -> Vec<ClientId> {
    histories
        .iter()
        .enumerate()
        .filter(|(_, h)| h.is_available())
        .map(|(i, _)| ClientId(i as u32))
        .collect()
}

/// Uniform sample of `min(k, candidates.len())` distinct candidates.
pub(crate) fn sample_uniform<R: Rng + ?Sized>(
    candidates: &[ClientId],
    k: usize,
    rng: &mut R,
) -> Vec<ClientId> {
    let amount = k.min(candidates.len());
    index::sample(rng, candidates.len(), amount)
        .into_iter()
        .map(|i| candidates[i])
        .collect()
}
