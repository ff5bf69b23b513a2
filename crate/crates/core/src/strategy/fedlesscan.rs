//! Semi-asynchronous tiered selection: rookies first, then clustered
//! participants, then stragglers on cooldown.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_uniform, SelectionError};
use crate::clustering::{
    cluster_members, default_epsilon_grid, select_epsilon, standardize, FeaturePoint,
};
use crate::model::{ClientHistory, ClientId, ClientProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedLesScanConfig {
    pub ema_alpha: f64,
    /// Updates with `T − t_i ≥ tau` are discarded.
    pub tau: u64,
    /// Penalty scale for missed rounds; the round timeout when unset.
    pub max_training_time: Option<f64>,
    /// Explicit epsilon candidates; a percentile-based grid when unset.
    pub epsilon_grid: Option<Vec<f64>>,
    pub grid_size: usize,
    pub min_pts: usize,
}

impl Default for FedLesScanConfig {
    fn default() -> Self {
        Self {
            ema_alpha: 0.5,
            tau: 2,
            max_training_time: None,
            epsilon_grid: None,
            grid_size: 20,
            min_pts: 2,
        }
    }
}

impl FedLesScanConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(SelectionError::InvalidConfig("ema_alpha must lie in (0, 1]".into()));
        }
        if self.tau == 0 {
            return Err(SelectionError::InvalidConfig("tau must be at least 1".into()));
        }
        if let Some(t) = self.max_training_time {
            if !(t > 0.0) {
                return Err(SelectionError::InvalidConfig("max_training_time must be positive".into()));
            }
        }
        if let Some(grid) = &self.epsilon_grid {
            if grid.is_empty() || grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(SelectionError::InvalidConfig(
                    "epsilon_grid must be a nonempty list of positive values".into(),
                ));
            }
        }
        if self.min_pts == 0 || self.grid_size == 0 {
            return Err(SelectionError::InvalidConfig("min_pts and grid_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TierPartition {
    pub rookies: Vec<ClientId>,
    pub participants: Vec<ClientId>,
    pub stragglers: Vec<ClientId>,
}

/// Cooldown bookkeeping at the end of a round the client was selected in.
pub fn update_cooldown(history: &mut ClientHistory, completed_in_time: bool, round: u64) {
    if completed_in_time {
        history.cooldown = 0;
        return;
    }
    history.cooldown = if history.cooldown == 0 { 1 } else { history.cooldown * 2 };
    if history.missed_rounds.last().is_none_or(|&last| last < round) {
        history.missed_rounds.push(round);
    }
}

/// A client that was not invoked in a round moves one step out of the
/// straggler tier.
pub fn decay_cooldown(history: &mut ClientHistory) {
    history.cooldown = history.cooldown.saturating_sub(1);
}

/// A late update for `round` proves the client was slow, not crashed: the
/// miss is forgotten and the cooldown doubling for it undone.
pub fn clear_missed_on_late_arrival(history: &mut ClientHistory, round: u64) -> Result<(), SelectionError> {
    let pos = history
        .missed_rounds
        .iter()
        .position(|&r| r == round)
        .ok_or(SelectionError::RoundNotMissed(round))?;
    history.missed_rounds.remove(pos);
    history.cooldown = if history.cooldown <= 1 { 0 } else { history.cooldown / 2 };
    Ok(())
}

pub fn partition_tiers(candidates: &[ClientId], histories: &[ClientHistory]) -> TierPartition {
    let mut tiers = TierPartition::default();
    for &id in candidates {
        let h = &histories[id.index()];
        if h.invocation_count == 0 {
            tiers.rookies.push(id);
        } else if h.cooldown > 0 {
            tiers.stragglers.push(id);
        } else {
            tiers.participants.push(id);
        }
    }
    tiers
}

/// Recursive EMA over a most-recent-first series: `e = α·x₀ + (1 − α)·EMA(rest)`.
fn ema(values_most_recent_first: impl DoubleEndedIterator<Item = f64>, alpha: f64) -> Option<f64> {
    let mut iter = values_most_recent_first.rev();
    let mut acc = iter.next()?;
    for v in iter {
        acc = alpha * v + (1.0 - alpha) * acc;
    }
    Some(acc)
}

pub fn training_ema(durations: &[f64], alpha: f64) -> Result<f64, SelectionError> {
    ema(durations.iter().copied(), alpha).ok_or(SelectionError::EmptyHistory)
}

/// EMA over `missed_round / current_round`, most recent miss first.
pub fn missed_round_ema(missed_rounds: &[u64], current_round: u64, alpha: f64) -> Result<f64, SelectionError> {
    if let Some(&bad) = missed_rounds.iter().find(|&&r| r == 0 || r > current_round) {
        return Err(SelectionError::InvalidRound {
            round: bad,
            limit: current_round,
        });
    }
    let ratios = missed_rounds.iter().rev().map(|&r| r as f64 / current_round as f64);
    Ok(ema(ratios, alpha).unwrap_or(0.0))
}

pub fn total_ema(training_ema: f64, missed_round_ema: f64, max_training_time: f64) -> f64 {
    training_ema + missed_round_ema * max_training_time
}

/// Tiered selection.
///
/// Participants are clustered on standardized `(training EMA, missed-round
/// EMA)` features, clusters are ordered by mean total EMA, and sampling starts
/// at the cluster matching training progress `round / max_rounds`, wrapping
/// around the ordered list. Inside a cluster the least-invoked clients go
/// first.
#[allow(clippy::too_many_arguments)]
pub fn select_clients_fedlesscan<R: Rng + ?Sized>(
    pool: &[ClientProfile],
    histories: &[ClientHistory],
    k: usize,
    round: u64,
    max_rounds: u64,
    max_training_time: f64,
    config: &FedLesScanConfig,
    rng: &mut R,
) -> Result<Vec<ClientId>, SelectionError> {
    if k == 0 {
        return Err(SelectionError::InvalidClientsPerRound);
    }
    if round == 0 || round > max_rounds {
        return Err(SelectionError::InvalidRound {
            round,
            limit: max_rounds,
        });
    }
    let candidates: Vec<ClientId> = pool
        .iter()
        .map(|p| p.id)
        .filter(|id| histories[id.index()].is_available())
        .collect();
    if candidates.is_empty() {
        return Err(SelectionError::NoAvailableClients);
    }
    let tiers = partition_tiers(&candidates, histories);
    if tiers.rookies.len() >= k {
        return Ok(sample_uniform(&tiers.rookies, k, rng));
    }

    let mut selection = tiers.rookies.clone();
    let needed = k - selection.len();
    selection.extend(pick_from_clusters(
        &tiers.participants,
        histories,
        needed,
        round,
        max_rounds,
        max_training_time,
        config,
    )?);
    if selection.len() < k {
        selection.extend(sample_uniform(&tiers.stragglers, k - selection.len(), rng));
    }
    Ok(selection)
}

fn pick_from_clusters(
    participants: &[ClientId],
    histories: &[ClientHistory],
    needed: usize,
    round: u64,
    max_rounds: u64,
    max_training_time: f64,
    config: &FedLesScanConfig,
) -> Result<Vec<ClientId>, SelectionError> {
    if needed == 0 || participants.is_empty() {
        return Ok(Vec::new());
    }
    let mut raw = Vec::with_capacity(participants.len());
    for &id in participants {
        let h = &histories[id.index()];
        // Participants whose invocations all crashed have no durations yet;
        // the timeout is the best bound on their training time.
        let train = ema(h.durations.iter().copied(), config.ema_alpha).unwrap_or(max_training_time);
        let missed = missed_round_ema(&h.missed_rounds, round, config.ema_alpha)?;
        raw.push([train, missed] as FeaturePoint);
    }

    let groups: Vec<Vec<usize>> = if participants.len() < 2 {
        vec![(0..participants.len()).collect()]
    } else {
        let scaled = standardize(&raw);
        let grid = match &config.epsilon_grid {
            Some(g) => g.clone(),
            None => default_epsilon_grid(&scaled, config.grid_size),
        };
        let choice = select_epsilon(&scaled, &grid, config.min_pts)?;
        cluster_members(&choice.labels)
    };

    let mut ordered: Vec<(f64, Vec<ClientId>)> = groups
        .into_iter()
        .map(|members| {
            let mean = members
                .iter()
                .map(|&i| total_ema(raw[i][0], raw[i][1], max_training_time))
                .sum::<f64>()
                / members.len() as f64;
            let mut ids: Vec<ClientId> = members.iter().map(|&i| participants[i]).collect();
            ids.sort_by_key(|id| (histories[id.index()].invocation_count, *id));
            (mean, ids)
        })
        .collect();
    ordered.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1[0].cmp(&b.1[0])));

    let count = ordered.len();
    let progress = round as f64 / max_rounds as f64;
    let start = ((progress * count as f64).floor() as usize).min(count - 1);
    let mut picked = Vec::with_capacity(needed);
    for offset in 0..count {
        for &id in &ordered[(start + offset) % count].1 {
            if picked.len() == needed {
                return Ok(picked);
            }
            picked.push(id);
        }
    }
    Ok(picked)
}
