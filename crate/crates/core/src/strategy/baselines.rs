//! Reference strategies: synchronous FedAvg / FedProx with random selection,
//! and buffered asynchronous FedBuff.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_uniform, SelectionError};
use crate::aggregation::{aggregate_stale, AggregationError, StalenessPolicy};
use crate::model::{ClientHistory, ClientId, ModelParams, UpdateRecord};

/// Knobs for the synchronous baselines. FedAvg is FedProx with `prox_mu = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyncConfig {
    pub prox_mu: f64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self { prox_mu: 0.01 }
    }
}

impl SyncConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if !(self.prox_mu >= 0.0 && self.prox_mu.is_finite()) {
            return Err(SelectionError::InvalidConfig("prox_mu must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedBuffConfig {
    /// Arrivals collected before a server update.
    pub buffer_size: usize,
    pub staleness: StalenessPolicy,
}

impl Default for FedBuffConfig {
    fn default() -> Self {
        Self {
            buffer_size: 10,
            staleness: StalenessPolicy::inverse_sqrt().renormalized(),
        }
    }
}

impl FedBuffConfig {
    /// Buffer size from a ratio of the clients per round, `ceil(ratio · k)`.
    pub fn from_ratio(ratio: f64, clients_per_round: usize) -> Self {
        let size = ((ratio * clients_per_round as f64) - 1e-9).ceil().max(1.0) as usize;
        Self {
            buffer_size: size,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.buffer_size == 0 {
            return Err(SelectionError::InvalidConfig("buffer_size must be at least 1".into()));
        }
        self.staleness.validate()?;
        Ok(())
    }
}

/// Uniform selection of up to `k` non-busy clients.
pub fn select_random<R: Rng + ?Sized>(
    histories: &[ClientHistory],
    k: usize,
    rng: &mut R,
) -> Result<Vec<ClientId>, SelectionError> {
    if k == 0 {
        return Err(SelectionError::InvalidClientsPerRound);
    }
    let available = super::available_clients(histories);
    if available.is_empty() {
        return Err(SelectionError::NoAvailableClients);
    }
    Ok(sample_uniform(&available, k, rng))
}

/// Server update emitted by a full buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferFlush {
    pub params: ModelParams,
    /// Updates that survived the age filter and entered the aggregate.
    pub included: Vec<UpdateRecord>,
}

/// Appends `incoming`; once the buffer holds `buffer_size` updates it is
/// aggregated at round `current` and cleared. A buffer made only of updates
/// older than the staleness horizon is cleared without emission.
pub fn fedbuff_step(
    buffer: &mut Vec<UpdateRecord>,
    incoming: UpdateRecord,
    config: &FedBuffConfig,
    current: u64,
) -> Result<Option<BufferFlush>, AggregationError> {
    buffer.push(incoming);
    if buffer.len() < config.buffer_size {
        return Ok(None);
    }
    let drained = std::mem::take(buffer);
    match aggregate_stale(&drained, current, &config.staleness) {
        Ok(params) => {
            let included = drained
                .into_iter()
                .filter(|u| config.staleness.admits(u.origin_round, current))
                .collect();
            Ok(Some(BufferFlush { params, included }))
        }
        Err(AggregationError::AllUpdatesStale) => Ok(None),
        Err(e) => Err(e),
    }
}
