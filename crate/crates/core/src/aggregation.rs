//! Aggregation kernels: cardinality-weighted averaging and staleness-damped
//! aggregation of updates that originate from earlier rounds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelParams, UpdateRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregationError {
    #[error("no updates to aggregate")]
    EmptyUpdateSet,
    #[error("every update is older than the staleness horizon")]
    AllUpdatesStale,
    #[error("update dimension {actual} does not match {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid round pair: origin {origin} at round {current}")]
    InvalidRound { origin: u64, current: u64 },
    #[error("staleness horizon must be at least 1")]
    InvalidHorizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StalenessKind {
    /// Only updates from the current round are kept, undamped.
    CurrentOnly,
    /// Linear damping `t_i / T` with a strict `T − t_i ≥ max_age` discard.
    Linear,
    /// Inverse square-root damping `(T − t_i + 1)^-0.5`, inclusive horizon.
    InverseSqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StalenessPolicy {
    pub kind: StalenessKind,
    pub max_age: u64,
    /// Divide by the sum of damped coefficients instead of the raw
    /// cardinality total.
    #[serde(default)]
    pub renormalize: bool,
}

impl StalenessPolicy {
    pub const fn current_only() -> Self {
        Self {
            kind: StalenessKind::CurrentOnly,
            max_age: 1,
            renormalize: false,
        }
    }

    /// Linear damping with the default cutoff of two rounds.
    pub const fn linear() -> Self {
        Self {
            kind: StalenessKind::Linear,
            max_age: 2,
            renormalize: false,
        }
    }

    /// Inverse square-root damping over at most five previous rounds.
    pub const fn inverse_sqrt() -> Self {
        Self {
            kind: StalenessKind::InverseSqrt,
            max_age: 5,
            renormalize: false,
        }
    }

    pub const fn renormalized(mut self) -> Self {
        self.renormalize = true;
        self
    }

    pub fn with_max_age(mut self, max_age: u64) -> Self {
        self.max_age = max_age;
        self
    }

    pub fn validate(&self) -> Result<(), AggregationError> {
        if self.max_age == 0 {
            return Err(AggregationError::InvalidHorizon);
        }
        Ok(())
    }

    /// Whether an update from `origin` survives the age filter at `current`.
    pub fn admits(&self, origin: u64, current: u64) -> bool {
        if origin > current {
            return false;
        }
        let age = current - origin;
        match self.kind {
            StalenessKind::CurrentOnly => age == 0,
            StalenessKind::Linear => age < self.max_age,
            StalenessKind::InverseSqrt => age <= self.max_age,
        }
    }

    pub fn weight(&self, origin: u64, current: u64) -> Result<f64, AggregationError> {
        match self.kind {
            StalenessKind::CurrentOnly => {
                if origin > current {
                    Err(AggregationError::InvalidRound { origin, current })
                } else {
                    Ok(1.0)
                }
            }
            StalenessKind::Linear => staleness_weight_linear(origin, current),
            StalenessKind::InverseSqrt => staleness_weight_inverse_sqrt(origin, current),
        }
    }
}

/// `t_i / T`; grows with `T` at fixed staleness.
pub fn staleness_weight_linear(origin: u64, current: u64) -> Result<f64, AggregationError> {
    if origin < 1 || origin > current {
        return Err(AggregationError::InvalidRound { origin, current });
    }
    Ok(origin as f64 / current as f64)
}

/// `(T − t_i + 1)^-0.5`; depends on staleness only.
pub fn staleness_weight_inverse_sqrt(origin: u64, current: u64) -> Result<f64, AggregationError> {
    if origin > current {
        return Err(AggregationError::InvalidRound { origin, current });
    }
    Ok(1.0 / ((current - origin + 1) as f64).sqrt())
}

fn check_dims<'a>(updates: impl IntoIterator<Item = &'a UpdateRecord>) -> Result<usize, AggregationError> {
    let mut dim = None;
    for u in updates {
        match dim {
            None => dim = Some(u.params.dim()),
            Some(d) if d != u.params.dim() => {
                return Err(AggregationError::DimensionMismatch {
                    expected: d,
                    actual: u.params.dim(),
                })
            }
            _ => {}
        }
    }
    dim.ok_or(AggregationError::EmptyUpdateSet)
}

/// `Σ (n_i / n) w_i` over all updates.
pub fn weighted_fedavg(updates: &[UpdateRecord]) -> Result<ModelParams, AggregationError> {
    let dim = check_dims(updates)?;
    let total: f64 = updates.iter().map(|u| u.cardinality as f64).sum();
    let mut out = vec![0.0; dim];
    for u in updates {
        let p = u.cardinality as f64 / total;
        for (o, v) in out.iter_mut().zip(u.params.as_slice()) {
            *o += p * v;
        }
    }
    Ok(ModelParams(out))
}

/// Staleness-damped aggregation at global round `current`.
///
/// Updates outside the policy horizon are dropped first; `n` is the sum of
/// the surviving cardinalities. Coefficients are not renormalized unless the
/// policy asks for it, so the output shrinks when stale updates are present.
pub fn aggregate_stale(
    updates: &[UpdateRecord],
    current: u64,
    policy: &StalenessPolicy,
) -> Result<ModelParams, AggregationError> {
    policy.validate()?;
    if updates.is_empty() {
        return Err(AggregationError::EmptyUpdateSet);
    }
    if let Some(u) = updates.iter().find(|u| u.origin_round > current) {
        return Err(AggregationError::InvalidRound {
            origin: u.origin_round,
            current,
        });
    }
    let survivors: Vec<&UpdateRecord> = updates
        .iter()
        .filter(|u| policy.admits(u.origin_round, current))
        .collect();
    if survivors.is_empty() {
        return Err(AggregationError::AllUpdatesStale);
    }
    let dim = check_dims(survivors.iter().copied())?;

    let coefficients: Vec<f64> = survivors
        .iter()
        .map(|u| Ok(policy.weight(u.origin_round, current)? * u.cardinality as f64))
        .collect::<Result<_, AggregationError>>()?;
    let denominator = if policy.renormalize {
        coefficients.iter().sum::<f64>()
    } else {
        survivors.iter().map(|u| u.cardinality as f64).sum::<f64>()
    };

    let mut out = vec![0.0; dim];
    for (u, c) in survivors.iter().zip(&coefficients) {
        let scale = c / denominator;
        for (o, v) in out.iter_mut().zip(u.params.as_slice()) {
            *o += scale * v;
        }
    }
    Ok(ModelParams(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClientId;
    use proptest::prelude::*;

    fn update(origin: u64, n: u32, w: &[f64]) -> UpdateRecord {
        UpdateRecord {
            client: ClientId(0),
            origin_round: origin,
            params: ModelParams(w.to_vec()),
            cardinality: n,
            arrival_time: 0.0,
        }
    }

    #[test]
    fn fedavg_examples() {
        assert_eq!(
            weighted_fedavg(&[update(1, 3, &[1.5, -2.0])]).unwrap(),
            ModelParams(vec![1.5, -2.0])
        );
        assert_eq!(
            weighted_fedavg(&[update(1, 2, &[0.0]), update(1, 2, &[2.0])]).unwrap(),
            ModelParams(vec![1.0])
        );
        let w = weighted_fedavg(&[update(1, 1, &[0.0]), update(1, 3, &[4.0])]).unwrap();
        assert!((w.0[0] - 3.0).abs() < 1e-15);
        assert_eq!(weighted_fedavg(&[]), Err(AggregationError::EmptyUpdateSet));
        assert!(matches!(
            weighted_fedavg(&[update(1, 1, &[0.0]), update(1, 1, &[0.0, 1.0])]),
            Err(AggregationError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn linear_weight_examples() {
        assert_eq!(staleness_weight_linear(4, 4).unwrap(), 1.0);
        assert_eq!(staleness_weight_linear(2, 4).unwrap(), 0.5);
        assert!(staleness_weight_linear(1, 2).unwrap() < staleness_weight_linear(9, 10).unwrap());
        assert!(staleness_weight_linear(0, 3).is_err());
        assert!(staleness_weight_linear(5, 3).is_err());
    }

    #[test]
    fn inverse_sqrt_weight_examples() {
        assert_eq!(staleness_weight_inverse_sqrt(7, 7).unwrap(), 1.0);
        assert!((staleness_weight_inverse_sqrt(3, 4).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(staleness_weight_inverse_sqrt(1, 4).unwrap(), 0.5);
        assert!(staleness_weight_inverse_sqrt(5, 4).is_err());
    }

    #[test]
    fn linear_policy_discards_at_tau() {
        let policy = StalenessPolicy::linear();
        let updates = [update(4, 1, &[1.0]), update(2, 1, &[100.0])];
        // Age-2 update is dropped; the survivor is current so weight 1.
        assert_eq!(aggregate_stale(&updates, 4, &policy).unwrap(), ModelParams(vec![1.0]));
        assert_eq!(
            aggregate_stale(&[update(2, 1, &[1.0])], 4, &policy),
            Err(AggregationError::AllUpdatesStale)
        );
    }

    #[test]
    fn inverse_sqrt_hand_example() {
        let policy = StalenessPolicy::inverse_sqrt();
        let w = aggregate_stale(&[update(4, 1, &[1.0]), update(3, 1, &[3.0])], 4, &policy).unwrap();
        let expected = 0.5 * 1.0 + 0.5f64.sqrt() * 0.5 * 3.0;
        assert!((w.0[0] - expected).abs() < 1e-12);
        assert!((w.0[0] - 1.5607).abs() < 1e-4);
    }

    #[test]
    fn inverse_sqrt_horizon_is_inclusive() {
        let policy = StalenessPolicy::inverse_sqrt();
        assert!(policy.admits(5, 10));
        assert!(!policy.admits(4, 10));
        assert!(aggregate_stale(&[update(5, 1, &[1.0])], 10, &policy).is_ok());
        assert_eq!(
            aggregate_stale(&[update(4, 1, &[1.0])], 10, &policy),
            Err(AggregationError::AllUpdatesStale)
        );
    }

    #[test]
    fn current_only_drops_stale() {
        let policy = StalenessPolicy::current_only();
        let w = aggregate_stale(&[update(3, 1, &[2.0]), update(2, 5, &[9.0])], 3, &policy).unwrap();
        assert_eq!(w, ModelParams(vec![2.0]));
    }

    #[test]
    fn renormalization_flag() {
        let mut policy = StalenessPolicy::inverse_sqrt();
        policy.renormalize = true;
        let w = aggregate_stale(&[update(4, 1, &[2.0]), update(3, 1, &[2.0])], 4, &policy).unwrap();
        assert!((w.0[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn future_origin_is_rejected() {
        let policy = StalenessPolicy::inverse_sqrt();
        assert!(matches!(
            aggregate_stale(&[update(5, 1, &[1.0])], 4, &policy),
            Err(AggregationError::InvalidRound { .. })
        ));
    }

    proptest! {
        #[test]
        fn inverse_sqrt_is_diagonal_consistent(t1 in 0u64..10_000, t2 in 0u64..10_000, s in 0u64..50) {
            let a = staleness_weight_inverse_sqrt(t1, t1 + s).unwrap();
            let b = staleness_weight_inverse_sqrt(t2, t2 + s).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn weights_decrease_with_staleness(current in 2u64..500, s in 0u64..50) {
            prop_assume!(s + 1 < current);
            let origin = current - s;
            prop_assert!(staleness_weight_inverse_sqrt(origin - 1, current).unwrap()
                < staleness_weight_inverse_sqrt(origin, current).unwrap());
            prop_assert!(staleness_weight_linear(origin - 1, current).unwrap()
                < staleness_weight_linear(origin, current).unwrap());
        }

        #[test]
        fn aggregate_is_permutation_invariant(
            entries in prop::collection::vec((0u64..6, 1u32..50, -10.0f64..10.0, -10.0f64..10.0), 1..12),
            rotate in 0usize..12,
            linear in any::<bool>(),
        ) {
            let current = 6;
            let policy = if linear {
                StalenessPolicy::linear()
            } else {
                StalenessPolicy::inverse_sqrt()
            };
            let updates: Vec<UpdateRecord> = entries
                .iter()
                .map(|&(age, n, a, b)| update(current - age, n, &[a, b]))
                .collect();
            let mut shuffled = updates.clone();
            shuffled.reverse();
            let len = shuffled.len();
            shuffled.rotate_left(rotate % len);
            let x = aggregate_stale(&updates, current, &policy);
            let y = aggregate_stale(&shuffled, current, &policy);
            match (x, y) {
                (Ok(x), Ok(y)) => {
                    for (p, q) in x.0.iter().zip(&y.0) {
                        prop_assert!((p - q).abs() < 1e-9);
                    }
                }
                (Err(e), Err(f)) => prop_assert_eq!(e, f),
                _ => prop_assert!(false, "one order failed and the other did not"),
            }
        }
    }
}
