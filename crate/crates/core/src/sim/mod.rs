//! Deterministic discrete-event simulation of a serverless FL deployment.
//!
//! The controller selects clients, dispatches them as function invocations,
//! and aggregates their results according to the configured strategy.
//! Invocations take `duration_of` seconds (plus a cold-start penalty when the
//! instance was scaled down), or crash and are reported as missed at the
//! round timeout.

mod engine;
mod event;
mod runtime;

use thiserror::Error;

pub use engine::{cost_params, replay_loss_trace, resolve_task, simulate, ResolvedTask, RunResult, EVENT_BUDGET};
pub use event::{EventKind, SimEvent};
pub use runtime::{duration_of, is_cold};

use crate::aggregation::AggregationError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::strategy::SelectionError;
use crate::task::TaskError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
    #[error("stopping rule not reached after {0} events")]
    StoppingRuleUnreachable(u64),
    #[error("global model diverged in round {0}")]
    Diverged(u64),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("internal error: {0}")]
    Internal(String),
}
