use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EntityRecord;
use crate::error::{Error, Result};

/// A calibration/test partition of the entities.
///
/// Both id lists follow ingestion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub index: usize,
    pub fraction: f64,
    pub calibration_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SplitPlan {
    /// Resolves the plan against the entity list it was drawn from.
    pub fn partition<'a>(
        &self,
        entities: &'a [EntityRecord],
    ) -> (Vec<&'a EntityRecord>, Vec<&'a EntityRecord>) {
        let cal: HashSet<&str> = self.calibration_ids.iter().map(String::as_str).collect();
        entities
            .iter()
            .partition(|e| cal.contains(e.entity_id.as_str()))
    }
}

/// Draws `n_splits` independent shuffles, keyed by `(seed, split index)`.
///
/// The calibration side receives `round(fraction * n)` entities, clamped so
/// both sides are non-empty.
pub fn make_splits(
    entities: &[EntityRecord],
    n_splits: usize,
    fraction: f64,
    seed: u64,
) -> Result<Vec<SplitPlan>> {
    if n_splits == 0 {
        return Err(Error::InvalidArgument("n_splits must be at least 1".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = entities.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 entities to split, got {n}"
        )));
    }
    let n_cal = ((fraction * n as f64).round() as usize).clamp(1, n - 1);

    let plans = (0..n_splits)
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut in_cal = vec![false; n];
            for &i in &order[..n_cal] {
                in_cal[i] = true;
            }
            let (mut calibration_ids, mut test_ids) = (Vec::new(), Vec::new());
            for (entity, cal) in entities.iter().zip(in_cal) {
                if cal {
                    calibration_ids.push(entity.entity_id.clone());
                } else {
                    test_ids.push(entity.entity_id.clone());
                }
            }
            SplitPlan {
                seed,
                index,
                fraction,
                calibration_ids,
                test_ids,
            }
        })
        .collect();
    Ok(plans)
}
