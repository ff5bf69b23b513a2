//! Client runtime model: training durations and cold starts.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::ClientProfile;

/// `work_units / capacity · exp(σ z) + cold_penalty·[cold]` with `z ~ N(0, 1)`
/// and `σ = slow_factor`. One normal draw is consumed even when `σ = 0`.
pub fn duration_of<R: Rng + ?Sized>(profile: &ClientProfile, work_units: u64, cold: bool, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    let base = work_units.max(1) as f64 / profile.hardware.cef_capacity;
    let noise = (profile.slow_factor * z).exp();
    let penalty = if cold { profile.hardware.cold_penalty } else { 0.0 };
    base * noise + penalty
}

/// A function instance is cold if it never finished before or has been idle
/// for the scale-down threshold or longer. With a zero threshold every
/// invocation is cold.
pub fn is_cold(last_finish_time: Option<f64>, now: f64, idle_threshold: f64) -> bool {
    match last_finish_time {
        None => true,
        Some(t) => now - t >= idle_threshold,
    }
}
