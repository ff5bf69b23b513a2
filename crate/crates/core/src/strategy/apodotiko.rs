//! Score-based probabilistic client selection with asynchronous,
//! staleness-aware aggregation.
//!
//! Each invoked client gets a Client Efficiency Score: the number of local
//! model updates per second it achieved, scaled by its data size and averaged
//! over its history with exponentially decaying weights (most recent first).
//! A booster multiplies the score of clients that were available but passed
//! over, so slow clients keep a nonzero and growing chance of selection.
//! Both the decay `λ = 1 − ρ` and the booster promotion `1 + ρ` derive from a
//! single adjustment rate `ρ`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sample_uniform, SelectionError};
use crate::aggregation::StalenessPolicy;
use crate::model::{ClientHistory, ClientId, ClientProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApodotikoConfig {
    /// Adjustment rate in `(0, 1]`.
    pub rho: f64,
    /// Fraction of `clients_per_round` results that triggers aggregation.
    pub concurrency_ratio: f64,
    /// Damping of stale results. Renormalized by default: without it every
    /// aggregation with stale results scales the model down, and the global
    /// model settles far from the optimum.
    pub staleness: StalenessPolicy,
    /// Multiply the per-round update rate by the data size `N_c` (so the score
    /// grows as `N_c²`). Turning it off keeps only the update rate.
    pub scale_by_cardinality: bool,
}

impl Default for ApodotikoConfig {
    fn default() -> Self {
        Self {
            rho: 0.2,
            concurrency_ratio: 0.3,
            staleness: StalenessPolicy::inverse_sqrt().renormalized(),
            scale_by_cardinality: true,
        }
    }
}

impl ApodotikoConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(SelectionError::InvalidConfig(format!(
                "rho must lie in (0, 1], got {}",
                self.rho
            )));
        }
        if !(self.concurrency_ratio > 0.0 && self.concurrency_ratio <= 1.0) {
            return Err(SelectionError::InvalidConfig(format!(
                "concurrency_ratio must lie in (0, 1], got {}",
                self.concurrency_ratio
            )));
        }
        self.staleness.validate()?;
        Ok(())
    }

    /// Score decay `λ = 1 − ρ`.
    pub fn decay(&self) -> f64 {
        1.0 - self.rho
    }

    /// Booster promotion factor `1 + ρ`.
    pub fn promotion(&self) -> f64 {
        1.0 + self.rho
    }
}

/// Weighted-average client efficiency score, multiplied by the booster.
pub fn calculate_score(
    history: &ClientHistory,
    profile: &ClientProfile,
    config: &ApodotikoConfig,
) -> Result<f64, SelectionError> {
    if history.durations.is_empty() {
        return Err(SelectionError::NoHistory(profile.id));
    }
    let updates = profile.work_units() as f64;
    let data = if config.scale_by_cardinality {
        profile.cardinality as f64
    } else {
        1.0
    };
    let decay = config.decay();
    let mut weight = 1.0;
    let mut weighted_sum = 0.0;
    let mut weight_total = 0.0;
    for &t in &history.durations {
        weighted_sum += weight * data * updates / t;
        weight_total += weight;
        weight *= decay;
    }
    Ok(history.booster * weighted_sum / weight_total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub client: ClientId,
    pub raw: f64,
    pub normalized: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreTable {
    pub entries: Vec<ScoreEntry>,
}

impl ScoreTable {
    pub fn build(scores: &[(ClientId, f64)]) -> Result<Self, SelectionError> {
        let raw: Vec<f64> = scores.iter().map(|(_, s)| *s).collect();
        let (normalized, probabilities) = normalize_scores(&raw)?;
        let entries = scores
            .iter()
            .zip(normalized.into_iter().zip(probabilities))
            .map(|(&(client, raw), (normalized, probability))| ScoreEntry {
                client,
                raw,
                normalized,
                probability,
            })
            .collect();
        Ok(Self { entries })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.probability).collect()
    }
}

/// Divide-by-max normalization followed by conversion to probabilities.
/// Returns `(normalized, probabilities)`.
pub fn normalize_scores(scores: &[f64]) -> Result<(Vec<f64>, Vec<f64>), SelectionError> {
    if scores.is_empty() {
        return Err(SelectionError::EmptyScores);
    }
    if let Some(&bad) = scores.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(SelectionError::NonPositiveScore(bad));
    }
    let max = scores.iter().cloned().fold(f64::MIN, f64::max);
    let normalized: Vec<f64> = scores.iter().map(|s| s / max).collect();
    let total: f64 = normalized.iter().sum();
    let probabilities = normalized.iter().map(|v| v / total).collect();
    Ok((normalized, probabilities))
}

/// Draws `m` distinct indices; each draw picks proportionally to the
/// remaining probabilities.
pub fn weighted_sample_without_replacement<R: Rng + ?Sized>(
    probabilities: &[f64],
    m: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut remaining: Vec<(usize, f64)> = probabilities.iter().copied().enumerate().collect();
    let mut picked = Vec::with_capacity(m.min(remaining.len()));
    while picked.len() < m && !remaining.is_empty() {
        let total: f64 = remaining.iter().map(|(_, p)| p).sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = remaining.len() - 1;
        for (pos, (_, p)) in remaining.iter().enumerate() {
            acc += p;
            if target < acc {
                chosen = pos;
                break;
            }
        }
        picked.push(remaining.remove(chosen).0);
    }
    picked
}

/// Resets the booster of selected clients and promotes available clients that
/// were passed over. Busy clients keep their booster.
pub fn update_boosters(
    histories: &mut [ClientHistory],
    available: &[ClientId],
    selected: &[ClientId],
    config: &ApodotikoConfig,
) {
    for &id in available {
        if !selected.contains(&id) {
            histories[id.index()].booster *= config.promotion();
        }
    }
    for &id in selected {
        histories[id.index()].booster = 1.0;
    }
}

/// Smallest result count that triggers aggregation, `ceil(k · CR)`.
pub fn aggregation_threshold(clients_per_round: usize, config: &ApodotikoConfig) -> usize {
    // Nudge below the product so 100 × 0.6 does not round up to 61.
    ((clients_per_round as f64 * config.concurrency_ratio) - 1e-9)
        .ceil()
        .max(1.0) as usize
}

pub fn should_aggregate(results_available: usize, clients_per_round: usize, config: &ApodotikoConfig) -> bool {
    results_available >= aggregation_threshold(clients_per_round, config)
}

/// Selects up to `k` available clients and updates boosters.
///
/// Clients without any recorded duration (never invoked, or every
/// invocation crashed) are treated as uninvoked and picked first, uniformly
/// at random. The remainder is drawn without replacement from the invoked,
/// available clients with probability proportional to their score.
pub fn select_clients<R: Rng + ?Sized>(
    pool: &[ClientProfile],
    histories: &mut [ClientHistory],
    k: usize,
    config: &ApodotikoConfig,
    rng: &mut R,
) -> Result<Vec<ClientId>, SelectionError> {
    Ok(select_with_table(pool, histories, k, config, rng)?.0)
}

/// Like [`select_clients`], also returning the score table used for the
/// weighted draw (empty when no draw was needed).
pub fn select_with_table<R: Rng + ?Sized>(
    pool: &[ClientProfile],
    histories: &mut [ClientHistory],
    k: usize,
    config: &ApodotikoConfig,
    rng: &mut R,
) -> Result<(Vec<ClientId>, ScoreTable), SelectionError> {
    if k == 0 {
        return Err(SelectionError::InvalidClientsPerRound);
    }
    let mut uninvoked = Vec::new();
    let mut invoked = Vec::new();
    for profile in pool {
        let h = &histories[profile.id.index()];
        if h.is_busy() {
            continue;
        }
        if h.durations.is_empty() {
            uninvoked.push(profile.id);
        } else {
            invoked.push(profile.id);
        }
    }
    if uninvoked.is_empty() && invoked.is_empty() {
        return Err(SelectionError::NoAvailableClients);
    }
    let available: Vec<ClientId> = uninvoked.iter().chain(&invoked).copied().collect();

    let mut table = ScoreTable::default();
    let selection = if uninvoked.len() >= k {
        sample_uniform(&uninvoked, k, rng)
    } else {
        let mut selection = uninvoked;
        let needed = k - selection.len();
        if needed > 0 && !invoked.is_empty() {
            let scores = invoked
                .iter()
                .map(|&id| {
                    calculate_score(&histories[id.index()], &pool[id.index()], config).map(|s| (id, s))
                })
                .collect::<Result<Vec<_>, _>>()?;
            table = ScoreTable::build(&scores)?;
            let picks = weighted_sample_without_replacement(&table.probabilities(), needed, rng);
            selection.extend(picks.into_iter().map(|i| invoked[i]));
        }
        selection
    };
    update_boosters(histories, &available, &selection, config);
    Ok((selection, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HardwareClass, InvocationStatus};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn profile(id: u32, cardinality: u32) -> ClientProfile {
        ClientProfile {
            id: ClientId(id),
            hardware: HardwareClass::new("cpu", 1.0, 0.0, 0.0),
            cardinality,
            batch_size: 10,
            epochs: 5,
            dropout_prob: 0.0,
            slow_factor: 0.0,
        }
    }

    fn history(durations: &[f64], booster: f64) -> ClientHistory {
        ClientHistory {
            durations: durations.to_vec(),
            booster,
            invocation_count: durations.len() as u64,
            ..Default::default()
        }
    }

    #[test]
    fn score_examples() {
        let cfg = ApodotikoConfig::default();
        let p = profile(0, 200);
        assert!((calculate_score(&history(&[50.0], 1.0), &p, &cfg).unwrap() - 400.0).abs() < 1e-9);
        assert!((calculate_score(&history(&[50.0], 1.2), &p, &cfg).unwrap() - 480.0).abs() < 1e-9);
        // Per-round values 400 (T=50) and 100 (T=200).
        let s = calculate_score(&history(&[50.0, 200.0], 1.0), &p, &cfg).unwrap();
        assert!((s - (400.0 + 0.8 * 100.0) / 1.8).abs() < 1e-9);
        assert_eq!(
            calculate_score(&history(&[], 1.0), &p, &cfg),
            Err(SelectionError::NoHistory(ClientId(0)))
        );
    }

    #[test]
    fn score_without_cardinality_scaling() {
        let cfg = ApodotikoConfig {
            scale_by_cardinality: false,
            ..Default::default()
        };
        let s = calculate_score(&history(&[50.0], 1.0), &profile(0, 200), &cfg).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_examples() {
        let (_, p) = normalize_scores(&[1.0, 1.0, 2.0]).unwrap();
        assert_eq!(p, vec![0.25, 0.25, 0.5]);
        let (_, p) = normalize_scores(&[3.0; 4]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let (n, p) = normalize_scores(&[400.0, 480.0, 266.667]).unwrap();
        assert_eq!(n[1], 1.0);
        for (got, want) in p.iter().zip([0.3488, 0.4186, 0.2326]) {
            assert!((got - want).abs() < 1e-3);
        }
        assert_eq!(normalize_scores(&[]), Err(SelectionError::EmptyScores));
        assert_eq!(normalize_scores(&[1.0, 0.0]), Err(SelectionError::NonPositiveScore(0.0)));
    }

    #[test]
    fn booster_rules() {
        let cfg = ApodotikoConfig::default();
        let mut hs = vec![history(&[1.0], 1.728), history(&[1.0], 1.0), history(&[1.0], 1.5)];
        hs[2].status = InvocationStatus::Busy;
        update_boosters(&mut hs, &[ClientId(0), ClientId(1)], &[ClientId(0)], &cfg);
        assert_eq!(hs[0].booster, 1.0);
        assert!((hs[1].booster - 1.2).abs() < 1e-15);
        assert_eq!(hs[2].booster, 1.5);

        let mut hs = vec![history(&[1.0], 1.0)];
        for _ in 0..3 {
            update_boosters(&mut hs, &[ClientId(0)], &[], &cfg);
        }
        assert!((hs[0].booster - 1.728).abs() < 1e-12);
    }

    #[test]
    fn aggregation_trigger() {
        let cfg = ApodotikoConfig {
            concurrency_ratio: 0.6,
            ..Default::default()
        };
        assert!(should_aggregate(60, 100, &cfg));
        assert!(!should_aggregate(59, 100, &cfg));
        let sync = ApodotikoConfig {
            concurrency_ratio: 1.0,
            ..Default::default()
        };
        assert!(should_aggregate(7, 7, &sync));
        assert!(!should_aggregate(6, 7, &sync));
        assert_eq!(aggregation_threshold(100, &ApodotikoConfig::default()), 30);
    }

    #[test]
    fn uninvoked_first_and_pool_exhaustion() {
        let cfg = ApodotikoConfig::default();
        let pool: Vec<_> = (0..10).map(|i| profile(i, 100)).collect();
        let mut hs = vec![ClientHistory::default(); 10];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sel = select_clients(&pool, &mut hs, 5, &cfg, &mut rng).unwrap();
        assert_eq!(sel.len(), 5);
        let mut dedup = sel.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 5);

        // Three invoked available clients, the rest busy.
        let mut hs: Vec<_> = (0..10).map(|_| history(&[10.0], 1.0)).collect();
        for h in hs.iter_mut().skip(3) {
            h.status = InvocationStatus::Busy;
        }
        let mut sel = select_clients(&pool, &mut hs, 5, &cfg, &mut rng).unwrap();
        sel.sort();
        assert_eq!(sel, vec![ClientId(0), ClientId(1), ClientId(2)]);

        for h in hs.iter_mut() {
            h.status = InvocationStatus::Busy;
        }
        assert_eq!(
            select_clients(&pool, &mut hs, 5, &cfg, &mut rng),
            Err(SelectionError::NoAvailableClients)
        );
    }

    #[test]
    fn weighted_sampling_is_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let mut picks = weighted_sample_without_replacement(&[0.7, 0.1, 0.1, 0.1], 3, &mut rng);
            picks.sort();
            picks.dedup();
            assert_eq!(picks.len(), 3);
        }
        assert_eq!(weighted_sample_without_replacement(&[0.5, 0.5], 5, &mut rng).len(), 2);
    }

    #[test]
    fn dominant_client_is_picked_most_often() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let probs = [0.9, 0.05, 0.05];
        let hits = (0..10_000)
            .filter(|_| weighted_sample_without_replacement(&probs, 1, &mut rng)[0] == 0)
            .count();
        assert!(hits >= 8_500, "{hits}");
    }
}
