//! Domain types shared by the strategies and the simulator.
//!
//! A [`ClientProfile`] is the static description of a client function (its
//! hardware class and local data shape); a [`ClientHistory`] is its evolving
//! behavioral record as seen by the controller.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("client {0} is already busy")]
    AlreadyBusy(ClientId),
    #[error("client {0} is not busy")]
    NotBusy(ClientId),
    #[error("training duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("invalid client profile: {0}")]
    InvalidProfile(String),
}

/// Opaque client identifier, unique within a scenario.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl ClientId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A class of function hardware, abstracted as a model-update throughput.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareClass {
    pub name: String,
    /// Model updates (local gradient steps) per second.
    pub cef_capacity: f64,
    /// Seconds added to an invocation that lands on a scaled-down instance.
    pub cold_penalty: f64,
    /// Currency per second of execution.
    pub cost_rate: f64,
}

impl HardwareClass {
    pub fn new(name: impl Into<String>, cef_capacity: f64, cold_penalty: f64, cost_rate: f64) -> Self {
        Self {
            name: name.into(),
            cef_capacity,
            cold_penalty,
            cost_rate,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.cef_capacity > 0.0 && self.cef_capacity.is_finite()) {
            return Err(ModelError::InvalidProfile(format!(
                "hardware class {:?} needs a positive capacity",
                self.name
            )));
        }
        if !(self.cold_penalty >= 0.0) || !(self.cost_rate >= 0.0) {
            return Err(ModelError::InvalidProfile(format!(
                "hardware class {:?} has a negative penalty or rate",
                self.name
            )));
        }
        Ok(())
    }
}

/// Static capacity and data shape of one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub id: ClientId,
    pub hardware: HardwareClass,
    /// Local sample count.
    pub cardinality: u32,
    pub batch_size: u32,
    pub epochs: u32,
    /// Probability that an invocation crashes and never reports back.
    pub dropout_prob: f64,
    /// Sigma of the multiplicative log-normal duration noise.
    pub slow_factor: f64,
}

impl ClientProfile {
    /// Local gradient steps per invocation, `ceil(N_c * E / B)`.
    pub fn work_units(&self) -> u64 {
        work_units(self.cardinality, self.epochs, self.batch_size)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.hardware.validate()?;
        if self.cardinality == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(ModelError::InvalidProfile(format!(
                "client {}: cardinality, batch size and epochs must be positive",
                self.id
            )));
        }
        if self.cardinality < self.batch_size {
            return Err(ModelError::InvalidProfile(format!(
                "client {}: cardinality {} below batch size {}",
                self.id, self.cardinality, self.batch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(ModelError::InvalidProfile(format!(
                "client {}: dropout probability {} outside [0, 1]",
                self.id, self.dropout_prob
            )));
        }
        if !(self.slow_factor >= 0.0 && self.slow_factor.is_finite()) {
            return Err(ModelError::InvalidProfile(format!(
                "client {}: slow factor must be finite and non-negative",
                self.id
            )));
        }
        Ok(())
    }
}

pub fn work_units(cardinality: u32, epochs: u32, batch_size: u32) -> u64 {
    (cardinality as u64 * epochs as u64).div_ceil(batch_size as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvocationStatus {
    Available,
    Busy,
}

/// Behavioral record of a client, owned by the controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientHistory {
    /// Training seconds per completed invocation, most recent first.
    pub durations: Vec<f64>,
    /// Rounds the client failed to report in time, strictly increasing.
    pub missed_rounds: Vec<u64>,
    pub cooldown: u64,
    pub booster: f64,
    pub invocation_count: u64,
    pub last_finish_time: Option<f64>,
    pub status: InvocationStatus,
}

impl Default for ClientHistory {
    fn default() -> Self {
        Self {
            durations: Vec::new(),
            missed_rounds: Vec::new(),
            cooldown: 0,
            booster: 1.0,
            invocation_count: 0,
            last_finish_time: None,
            status: InvocationStatus::Available,
        }
    }
}

impl ClientHistory {
    pub fn is_busy(&self) -> bool {
        self.status == InvocationStatus::Busy
    }

    pub fn is_available(&self) -> bool {
        self.status == InvocationStatus::Available
    }

    pub fn mark_busy(&mut self, id: ClientId) -> Result<(), ModelError> {
        if self.is_busy() {
            return Err(ModelError::AlreadyBusy(id));
        }
        self.status = InvocationStatus::Busy;
        self.invocation_count += 1;
        Ok(())
    }

    pub fn record_completion(
        &mut self,
        id: ClientId,
        duration: f64,
        finish_time: f64,
    ) -> Result<(), ModelError> {
        if !self.is_busy() {
            return Err(ModelError::NotBusy(id));
        }
        if !(duration > 0.0) {
            return Err(ModelError::NonPositiveDuration(duration));
        }
        self.durations.insert(0, duration);
        self.status = InvocationStatus::Available;
        self.last_finish_time = Some(finish_time);
        Ok(())
    }

    /// Releases a crashed invocation without recording a duration.
    pub fn release_after_miss(&mut self, id: ClientId) -> Result<(), ModelError> {
        if !self.is_busy() {
            return Err(ModelError::NotBusy(id));
        }
        self.status = InvocationStatus::Available;
        Ok(())
    }
}

/// Dense parameter vector of the global or a local model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelParams(pub Vec<f64>);

impl ModelParams {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn distance(&self, other: &ModelParams) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<Vec<f64>> for ModelParams {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// A client's model update as written to the parameter store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub client: ClientId,
    /// Global round the client was dispatched in.
    pub origin_round: u64,
    pub params: ModelParams,
    pub cardinality: u32,
    pub arrival_time: f64,
}
