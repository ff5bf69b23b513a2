//! Run metrics: effective update ratio, selection bias, cold starts, cost
//! and time to target.
//!
//! Every metric can be recomputed from the event log alone
//! ([`rounds_from_events`], [`summarize_events`]), which is how run artifacts
//! are checked against the simulator's incremental bookkeeping.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

use crate::sim::{EventKind, SimEvent};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no clients were selected")]
    NoSelection,
    #[error("successful count {successful} exceeds selected count {selected}")]
    InvalidCounts { selected: u64, successful: u64 },
    #[error("client pool is empty")]
    EmptyPool,
    #[error("event log has no dispatches")]
    NoDispatches,
    #[error("event log references unknown invocation {0}")]
    UnknownInvocation(u64),
    #[error("client index {0} outside the cost table")]
    UnknownClient(usize),
}

pub fn eur(selected: u64, successful: u64) -> Result<f64, MetricsError> {
    if selected == 0 {
        return Err(MetricsError::NoSelection);
    }
    if successful > selected {
        return Err(MetricsError::InvalidCounts { selected, successful });
    }
    Ok(successful as f64 / selected as f64)
}

/// Gap between the most and the least invoked client.
pub fn selection_bias(invocation_counts: &[u64]) -> Result<u64, MetricsError> {
    let max = invocation_counts.iter().max().ok_or(MetricsError::EmptyPool)?;
    let min = invocation_counts.iter().min().ok_or(MetricsError::EmptyPool)?;
    Ok(max - min)
}

pub fn invocation_counts(events: &[SimEvent], num_clients: usize) -> Vec<u64> {
    let mut counts = vec![0u64; num_clients];
    for e in events {
        if let EventKind::Dispatch { client, .. } = e.kind {
            counts[client.index()] += 1;
        }
    }
    counts
}

pub fn cold_start_ratio(events: &[SimEvent]) -> Result<f64, MetricsError> {
    let (mut cold, mut total) = (0u64, 0u64);
    for e in events {
        if let EventKind::Dispatch { cold: c, .. } = e.kind {
            total += 1;
            cold += c as u64;
        }
    }
    if total == 0 {
        return Err(MetricsError::NoDispatches);
    }
    Ok(cold as f64 / total as f64)
}

/// Prices of the serverless platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub per_invocation: f64,
    /// Execution price per second for each client, indexed by client id.
    pub client_rates: Vec<f64>,
}

impl CostParams {
    pub fn invocation_cost(&self, client: usize, seconds: f64) -> Result<f64, MetricsError> {
        let rate = self
            .client_rates
            .get(client)
            .ok_or(MetricsError::UnknownClient(client))?;
        Ok(self.per_invocation + seconds * rate)
    }
}

/// Billed cost of every finished invocation in the log. Crashed invocations
/// are billed from dispatch until their miss; invocations still running at
/// the end of the segment are not billed.
pub fn estimate_cost(events: &[SimEvent], params: &CostParams) -> Result<f64, MetricsError> {
    let mut dispatched: HashMap<u64, f64> = HashMap::new();
    let mut total = 0.0;
    for e in events {
        match &e.kind {
            EventKind::Dispatch { invocation, .. } => {
                dispatched.insert(*invocation, e.time);
            }
            EventKind::Completion {
                invocation,
                client,
                duration,
                ..
            } => {
                total += params.invocation_cost(client.index(), *duration)?;
                dispatched.remove(invocation);
            }
            EventKind::Miss { invocation, client, .. } => {
                let start = dispatched
                    .remove(invocation)
                    .ok_or(MetricsError::UnknownInvocation(*invocation))?;
                total += params.invocation_cost(client.index(), e.time - start)?;
            }
            _ => {}
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub time: f64,
    pub loss: f64,
}

/// First trace time whose loss is at or below `target`.
pub fn time_to_target(trace: &[LossPoint], target: f64) -> Option<f64> {
    trace.iter().find(|p| p.loss <= target).map(|p| p.time)
}

/// Per-round bookkeeping, one row of the rounds table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub selected: u64,
    /// Updates from this round that entered an aggregation.
    pub successful: u64,
    pub cold: u64,
    /// Updates from earlier rounds included when this round closed.
    pub stale: u64,
    /// Global loss and time when this round closed, if it did.
    pub loss: Option<f64>,
    pub sim_time: Option<f64>,
}

impl RoundRecord {
    pub fn new(round: u64) -> Self {
        Self {
            round,
            selected: 0,
            successful: 0,
            cold: 0,
            stale: 0,
            loss: None,
            sim_time: None,
        }
    }

    pub fn eur(&self) -> Option<f64> {
        eur(self.selected, self.successful).ok()
    }
}

pub const ROUNDS_HEADER: &str = "round,selected,successful,eur,cold,stale,loss,sim_time";

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn rounds_csv(rounds: &[RoundRecord]) -> String {
    let mut out = String::from(ROUNDS_HEADER);
    out.push('\n');
    for r in rounds {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.round,
            r.selected,
            r.successful,
            opt_cell(r.eur()),
            r.cold,
            r.stale,
            opt_cell(r.loss),
            opt_cell(r.sim_time)
        ));
    }
    out
}

/// Rebuilds the rounds table from the event log.
pub fn rounds_from_events(events: &[SimEvent]) -> Result<Vec<RoundRecord>, MetricsError> {
    let mut rounds: BTreeMap<u64, RoundRecord> = BTreeMap::new();
    let mut origin: HashMap<u64, u64> = HashMap::new();
    for e in events {
        match &e.kind {
            EventKind::Dispatch {
                invocation,
                round,
                cold,
                ..
            } => {
                origin.insert(*invocation, *round);
                let r = rounds.entry(*round).or_insert_with(|| RoundRecord::new(*round));
                r.selected += 1;
                r.cold += *cold as u64;
            }
            EventKind::AggregationCheck { round, included, loss } => {
                let mut stale = 0;
                for inv in included {
                    let o = *origin.get(inv).ok_or(MetricsError::UnknownInvocation(*inv))?;
                    rounds.entry(o).or_insert_with(|| RoundRecord::new(o)).successful += 1;
                    stale += (o < *round) as u64;
                }
                let r = rounds.entry(*round).or_insert_with(|| RoundRecord::new(*round));
                r.stale = stale;
                r.loss = Some(*loss);
                r.sim_time = Some(e.time);
            }
            _ => {}
        }
    }
    Ok(rounds.into_values().collect())
}

/// Mean of per-round EUR over rounds that selected anyone.
pub fn mean_eur(rounds: &[RoundRecord]) -> Option<f64> {
    let values: Vec<f64> = rounds.iter().filter_map(RoundRecord::eur).collect();
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Loss after each aggregation that included at least one update. Points
/// sharing a timestamp collapse to the last one, so times strictly increase.
pub fn loss_trace_from_events(events: &[SimEvent]) -> Vec<LossPoint> {
    let mut trace: Vec<LossPoint> = Vec::new();
    for e in events {
        if let EventKind::AggregationCheck { included, loss, .. } = &e.kind {
            if included.is_empty() {
                continue;
            }
            push_trace_point(&mut trace, e.time, *loss);
        }
    }
    trace
}

pub fn push_trace_point(trace: &mut Vec<LossPoint>, time: f64, loss: f64) {
    match trace.last_mut() {
        Some(last) if last.time == time => last.loss = loss,
        _ => trace.push(LossPoint { time, loss }),
    }
}

/// Run-independent inputs needed to summarize an event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryContext {
    pub num_clients: usize,
    pub cost: CostParams,
    pub initial_loss: f64,
    pub optimum_loss: f64,
    pub target_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub final_loss: f64,
    pub initial_loss: f64,
    pub optimum_loss: f64,
    pub target_loss: Option<f64>,
    pub time_to_target: Option<f64>,
    /// Time of the last round close.
    pub total_time: f64,
    pub rounds: u64,
    pub aggregations: u64,
    pub dispatches: u64,
    pub completions: u64,
    pub misses: u64,
    pub cost: f64,
    pub bias: u64,
    pub invocation_histogram: Vec<u64>,
    pub cold_start_ratio: f64,
    pub mean_eur: Option<f64>,
}

/// Summary metrics computed from nothing but the event log.
pub fn summarize_events(events: &[SimEvent], ctx: &SummaryContext) -> Result<Summary, MetricsError> {
    let (mut dispatches, mut completions, mut misses) = (0, 0, 0);
    let (mut checks, mut aggregations) = (0, 0);
    let mut final_loss = ctx.initial_loss;
    let mut total_time = 0.0;
    for e in events {
        match &e.kind {
            EventKind::Dispatch { .. } => dispatches += 1,
            EventKind::Completion { .. } => completions += 1,
            EventKind::Miss { .. } => misses += 1,
            EventKind::AggregationCheck { included, loss, .. } => {
                checks += 1;
                aggregations += !included.is_empty() as u64;
                final_loss = *loss;
                total_time = e.time;
            }
            EventKind::RoundTimeout { .. } => {}
        }
    }
    let histogram = invocation_counts(events, ctx.num_clients);
    let rounds = rounds_from_events(events)?;
    let trace = loss_trace_from_events(events);
    Ok(Summary {
        final_loss,
        initial_loss: ctx.initial_loss,
        optimum_loss: ctx.optimum_loss,
        target_loss: ctx.target_loss,
        time_to_target: ctx.target_loss.and_then(|t| time_to_target(&trace, t)),
        total_time,
        rounds: checks,
        aggregations,
        dispatches,
        completions,
        misses,
        cost: estimate_cost(events, &ctx.cost)?,
        bias: selection_bias(&histogram)?,
        invocation_histogram: histogram,
        cold_start_ratio: cold_start_ratio(events)?,
        mean_eur: mean_eur(&rounds),
    })
}
