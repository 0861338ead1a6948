use serde::{Deserialize, Serialize};

use super::{conformal_quantile, safe_threshold, GroupPatch, SafeValue, ThresholdRule};
use crate::dataset::{EntityRecord, GroupAtlas};
use crate::error::{Error, Result};

/// Objective values at or below this count as zero.
const NEGLIGIBLE_OBJECTIVE: f64 = 1e-24;

/// Marginal split conformal: one threshold, the conformal quantile of the
/// calibration safe thresholds.
pub fn split_conformal(calibration: &[&EntityRecord], alpha: f64) -> Result<ThresholdRule> {
    let r: Vec<SafeValue> = calibration.iter().map(|e| safe_threshold(e).r).collect();
    Ok(ThresholdRule::Constant {
        q: conformal_quantile(&r, alpha)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MvscStop {
    /// Largest group objective was already zero.
    Calibrated,
    /// Largest group objective failed to decrease.
    NoImprovement,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvscFit {
    pub rule: ThresholdRule,
    /// Largest group objective of each accepted patch.
    pub objective_trace: Vec<f64>,
    pub stop: MvscStop,
}

/// Multivalid split conformal with the default group support of 10.
pub fn mvsc(calibration: &[&EntityRecord], groups: &GroupAtlas, alpha: f64, max_iter: usize) -> Result<MvscFit> {
    mvsc_with_support(calibration, groups, alpha, max_iter, 10)
}

/// Starts from the split-conformal threshold and repeatedly re-fits the
/// threshold of the group whose coverage misses `1 - alpha` by the most,
/// weighted by group size: `H(g) = (n_g / n) * ((1 - alpha) - coverage_g)^2`.
/// Groups with fewer than `min_support` calibration entities are skipped.
pub fn mvsc_with_support(
    calibration: &[&EntityRecord],
    groups: &GroupAtlas,
    alpha: f64,
    max_iter: usize,
    min_support: usize,
) -> Result<MvscFit> {
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    let ThresholdRule::Constant { q: base } = split_conformal(calibration, alpha)? else {
        unreachable!()
    };
    let n = calibration.len() as f64;
    let target = 1.0 - alpha;
    let r: Vec<SafeValue> = calibration.iter().map(|e| safe_threshold(e).r).collect();
    let members: Vec<Vec<usize>> = groups
        .groups
        .iter()
        .map(|g| {
            (0..calibration.len())
                .filter(|&i| g.contains(&calibration[i].attributes))
                .collect()
        })
        .collect();
    let mut h = vec![base; calibration.len()];
    let mut patches = Vec::new();
    let mut trace = Vec::new();
    let mut previous = f64::INFINITY;
    let mut stop = MvscStop::MaxIterations;

    for _ in 0..max_iter {
        let mut best: Option<(usize, f64)> = None;
        for (g, idx) in members.iter().enumerate() {
            if idx.len() < min_support.max(1) {
                continue;
            }
            let covered = idx.iter().filter(|&&i| r[i].is_covered_by(h[i])).count();
            let cov = covered as f64 / idx.len() as f64;
            let objective = idx.len() as f64 / n * (target - cov).powi(2);
            if best.is_none_or(|(_, b)| objective > b) {
                best = Some((g, objective));
            }
        }
        let Some((g, objective)) = best else {
            stop = MvscStop::Calibrated;
            break;
        };
        if objective <= NEGLIGIBLE_OBJECTIVE {
            stop = MvscStop::Calibrated;
            break;
        }
        if objective >= previous {
            stop = MvscStop::NoImprovement;
            break;
        }
        let group_r: Vec<SafeValue> = members[g].iter().map(|&i| r[i]).collect();
        let q = conformal_quantile(&group_r, alpha)?;
        for &i in &members[g] {
            h[i] = q;
        }
        patches.push(GroupPatch {
            group: groups.groups[g].clone(),
            q,
        });
        trace.push(objective);
        previous = objective;
    }

    Ok(MvscFit {
        rule: ThresholdRule::Grouped { base, patches },
        objective_trace: trace,
        stop,
    })
}
