//! Training-side schedules for the auxiliary ensemble members.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::GtId;

/// Subtasks of a monocular 3D detector whose losses get perturbed.
pub const DEFAULT_SUBTASKS: [&str; 7] = [
    "box2d",
    "offset3d",
    "dimensions",
    "depth",
    "orientation",
    "confidence",
    "classification",
];

/// Share of labeled data used for training at progress `t`:
/// `0.5 + 0.4 * exp(-alpha * t)`.
pub fn bagging_fraction(t: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!(
            "progress t must lie in [0, 1], got {t}"
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    Ok(0.5 + 0.4 * (-alpha * t).exp())
}

/// One multiplier per subtask, drawn independently from `[1 - delta, 1 + delta)`.
pub fn sample_loss_weights(
    subtasks: &[String],
    delta: f64,
    seed: u64,
) -> Result<BTreeMap<String, f64>> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in [0, 1), got {delta}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(subtasks
        .iter()
        .map(|s| {
            let u: f64 = rng.random();
            (s.clone(), 1.0 + delta * (2.0 * u - 1.0))
        })
        .collect())
}

/// Uniform subset of `round(s(t) * n)` labels, never empty when `n >= 1`.
pub fn sample_bagged_labels(
    labeled: &BTreeSet<GtId>,
    t: f64,
    alpha: f64,
    seed: u64,
) -> Result<BTreeSet<GtId>> {
    let s = bagging_fraction(t, alpha)?;
    let n = labeled.len();
    if n == 0 {
        return Ok(BTreeSet::new());
    }
    let size = ((s * n as f64).round() as usize).clamp(1, n);
    let ids: Vec<GtId> = labeled.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, n, size)
        .into_iter()
        .map(|i| ids[i])
        .collect())
}
