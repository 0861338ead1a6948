use serde::{Deserialize, Serialize};

use super::{CalibratedScorer, ClaimSet, LevelSetGrid};
use crate::dataset::GroupDef;
use crate::error::{Error, Result};

/// Calibration statistics of one level set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub count: usize,
    /// Mean of `label - score` over the bin's calibration claims.
    pub delta: f64,
    /// Output for claims rounding into this bin: the bin's label frequency.
    /// `None` for bins without calibration claims, which pass scores through.
    pub value: Option<f64>,
}

/// Histogram binning: every claim in a level set is mapped to that level
/// set's empirical label frequency. On the calibration set the result has
/// zero bias in every level set.
pub fn histogram_binning(claims: &ClaimSet, grid: LevelSetGrid) -> Result<CalibratedScorer> {
    if claims.is_empty() {
        return Err(Error::InsufficientData("histogram binning needs at least one claim".into()));
    }
    let mut count = vec![0usize; grid.n_bins()];
    let mut label_sum = vec![0.0; grid.n_bins()];
    let mut resid_sum = vec![0.0; grid.n_bins()];
    for (&s, &y) in claims.scores().iter().zip(claims.labels()) {
        let b = grid.index(s);
        let y = f64::from(u8::from(y));
        count[b] += 1;
        label_sum[b] += y;
        resid_sum[b] += y - s;
    }
    let bins = (0..grid.n_bins())
        .map(|b| {
            if count[b] == 0 {
                HistogramBin {
                    count: 0,
                    delta: 0.0,
                    value: None,
                }
            } else {
                let n = count[b] as f64;
                HistogramBin {
                    count: count[b],
                    delta: resid_sum[b] / n,
                    value: Some(label_sum[b] / n),
                }
            }
        })
        .collect();
    Ok(CalibratedScorer::Histogram { grid, bins })
}

/// One additive correction on the cell (level set `bin`, `group`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub bin: usize,
    pub group: GroupDef,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IghbStop {
    /// No eligible cell has a non-negligible objective.
    Calibrated,
    /// The selected objective did not strictly decrease; that patch was
    /// discarded.
    NoImprovement,
    MaxIterations,
}

/// IGHB output with its fitting trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IghbFit {
    pub scorer: CalibratedScorer,
    /// Objective `P(S_pg) * delta_pg^2` of each accepted patch, in order.
    pub objective_trace: Vec<f64>,
    pub stop: IghbStop,
}

impl IghbFit {
    pub fn patches(&self) -> &[Patch] {
        match &self.scorer {
            CalibratedScorer::PatchedHistogram { patches, .. } => patches,
            _ => unreachable!("IGHB always yields a patched histogram"),
        }
    }
}

/// Objectives this small carry no usable correction (|delta| ~ 1e-12).
const NEGLIGIBLE_OBJECTIVE: f64 = 1e-24;

/// Iterative grouped histogram binning with the default minimum cell support
/// of 10 calibration claims.
pub fn ighb(claims: &ClaimSet, grid: LevelSetGrid, max_iter: usize) -> Result<IghbFit> {
    ighb_with_support(claims, grid, max_iter, 10)
}

/// Iterative grouped histogram binning.
///
/// Each round scores every (level set, group) cell by
/// `H = P(cell) * bias(cell)^2` on the current scores, picks the largest
/// (ties: lower level set, then group name), and shifts the scores of that
/// cell's claims by the cell bias. Level sets are recomputed from the shifted
/// scores before the next round. Cells with fewer than `min_support` claims
/// are ineligible. Fitting stops once the selected `H` fails to strictly
/// decrease (that patch is dropped), nothing is left to correct, or after
/// `max_iter` rounds.
pub fn ighb_with_support(
    claims: &ClaimSet,
    grid: LevelSetGrid,
    max_iter: usize,
    min_support: usize,
) -> Result<IghbFit> {
    if claims.groups().is_empty() {
        return Err(Error::InvalidArgument("IGHB needs at least one group".into()));
    }
    if max_iter == 0 {
        return Err(Error::InvalidArgument("IGHB needs max_iter >= 1".into()));
    }
    if claims.is_empty() {
        return Err(Error::InsufficientData("IGHB needs at least one claim".into()));
    }
    let n = claims.len() as f64;
    let n_bins = grid.n_bins();
    let groups = claims.groups();
    let mut by_name: Vec<usize> = (0..groups.len()).collect();
    by_name.sort_by(|&a, &b| groups[a].name.cmp(&groups[b].name));

    let labels: Vec<f64> = claims.labels().iter().map(|&y| f64::from(u8::from(y))).collect();
    let mut scores = claims.scores().to_vec();
    let mut patches = Vec::new();
    let mut trace = Vec::new();
    let mut previous = f64::INFINITY;
    let mut stop = IghbStop::MaxIterations;

    let mut count = vec![0usize; n_bins * groups.len()];
    let mut resid = vec![0.0; n_bins * groups.len()];
    for _ in 0..max_iter {
        count.iter_mut().for_each(|c| *c = 0);
        resid.iter_mut().for_each(|r| *r = 0.0);
        for g in 0..groups.len() {
            for &i in claims.members(g) {
                let cell = g * n_bins + grid.index(scores[i]);
                count[cell] += 1;
                resid[cell] += labels[i] - scores[i];
            }
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for bin in 0..n_bins {
            for &g in &by_name {
                let cell = g * n_bins + bin;
                if count[cell] < min_support.max(1) {
                    continue;
                }
                let delta = resid[cell] / count[cell] as f64;
                let h = count[cell] as f64 / n * delta * delta;
                if best.is_none_or(|(_, _, top)| h > top) {
                    best = Some((bin, g, h));
                }
            }
        }
        let Some((bin, g, h)) = best.filter(|&(_, _, h)| h > NEGLIGIBLE_OBJECTIVE) else {
            stop = IghbStop::Calibrated;
            break;
        };
        if h >= previous {
            stop = IghbStop::NoImprovement;
            break;
        }
        let cell = g * n_bins + bin;
        let delta = resid[cell] / count[cell] as f64;
        for &i in claims.members(g) {
            if grid.index(scores[i]) == bin {
                scores[i] += delta;
            }
        }
        patches.push(Patch {
            bin,
            group: groups[g].clone(),
            delta,
        });
        trace.push(h);
        previous = h;
    }
    Ok(IghbFit {
        scorer: CalibratedScorer::PatchedHistogram { grid, patches },
        objective_trace: trace,
        stop,
    })
}
