//! Evaluation metrics for calibrated scores and conformal rules.
//!
//! Probabilities and biases are empirical. Bias is measured per level set of
//! the (rounded) score as the mean of `label - score` over its claims.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::calibration::{ClaimSet, LevelSetGrid};
use crate::conformal::{retain, ThresholdRule};
use crate::dataset::{EntityRecord, GroupAtlas, GroupDef};
use crate::error::{Error, Result};

fn check_aligned(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::InsufficientData("metric of an empty claim set".into()));
    }
    Ok(())
}

/// Per-bin `(count, sum of label - score)` over the selected claims.
fn bin_sums(scores: &[f64], labels: &[bool], grid: &LevelSetGrid, select: impl Fn(usize) -> bool) -> Vec<(usize, f64)> {
    let mut bins = vec![(0usize, 0.0f64); grid.n_bins()];
    for (i, (&s, &y)) in scores.iter().zip(labels).enumerate() {
        if select(i) {
            let cell = &mut bins[grid.index(s)];
            cell.0 += 1;
            cell.1 += f64::from(u8::from(y)) - s;
        }
    }
    bins
}

fn asce_from_bins(bins: &[(usize, f64)]) -> f64 {
    let total: usize = bins.iter().map(|b| b.0).sum();
    bins.iter()
        .filter(|b| b.0 > 0)
        .map(|&(count, sum)| {
            let bias = sum / count as f64;
            count as f64 / total as f64 * bias * bias
        })
        .sum()
}

/// Average squared calibration error: `sum_p P(S_p) * bias_p^2`.
pub fn asce(scores: &[f64], labels: &[bool], grid: &LevelSetGrid) -> Result<f64> {
    check_aligned(scores, labels)?;
    Ok(asce_from_bins(&bin_sums(scores, labels, grid, |_| true)))
}

/// A metric evaluated per group with its max and mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupValues {
    pub per_group: BTreeMap<String, f64>,
    /// Zero when no group has members.
    pub max: f64,
    pub mean: f64,
    /// Groups without any member claim; excluded from every aggregate.
    pub empty: Vec<String>,
}

impl GroupValues {
    fn collect(groups: &[GroupDef], values: Vec<Option<f64>>) -> Self {
        let mut per_group = BTreeMap::new();
        let mut empty = Vec::new();
        for (g, v) in groups.iter().zip(values) {
            match v {
                Some(v) => {
                    per_group.insert(g.name.clone(), v);
                }
                None => empty.push(g.name.clone()),
            }
        }
        let max = per_group.values().copied().fold(0.0, f64::max);
        let mean = if per_group.is_empty() {
            0.0
        } else {
            per_group.values().sum::<f64>() / per_group.len() as f64
        };
        GroupValues {
            per_group,
            max,
            mean,
            empty,
        }
    }
}

fn check_masks(n: usize, groups: &[GroupDef], masks: &[Vec<bool>]) -> Result<()> {
    if masks.len() != groups.len() || masks.iter().any(|m| m.len() != n) {
        return Err(Error::InvalidArgument("membership masks do not match the claims".into()));
    }
    Ok(())
}

/// ASCE restricted to each group's member claims.
pub fn gasce(
    scores: &[f64],
    labels: &[bool],
    grid: &LevelSetGrid,
    groups: &[GroupDef],
    masks: &[Vec<bool>],
) -> Result<GroupValues> {
    check_aligned(scores, labels)?;
    check_masks(scores.len(), groups, masks)?;
    let values = masks
        .iter()
        .map(|mask| {
            let bins = bin_sums(scores, labels, grid, |i| mask[i]);
            bins.iter().any(|b| b.0 > 0).then(|| asce_from_bins(&bins))
        })
        .collect();
    Ok(GroupValues::collect(groups, values))
}

/// Mean of `(score - label)^2`.
pub fn brier(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_aligned(scores, labels)?;
    Ok(brier_sum(scores, labels, |_| true).0)
}

fn brier_sum(scores: &[f64], labels: &[bool], select: impl Fn(usize) -> bool) -> (f64, usize) {
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, (&s, &y)) in scores.iter().zip(labels).enumerate() {
        if select(i) {
            sum += (s - f64::from(u8::from(y))).powi(2);
            n += 1;
        }
    }
    (if n == 0 { 0.0 } else { sum / n as f64 }, n)
}

/// Brier score per group.
pub fn group_brier(scores: &[f64], labels: &[bool], groups: &[GroupDef], masks: &[Vec<bool>]) -> Result<GroupValues> {
    check_aligned(scores, labels)?;
    check_masks(scores.len(), groups, masks)?;
    let values = masks
        .iter()
        .map(|mask| {
            let (v, n) = brier_sum(scores, labels, |i| mask[i]);
            (n > 0).then_some(v)
        })
        .collect();
    Ok(GroupValues::collect(groups, values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinDiagnostic {
    /// Group name, or `all` for the marginal row.
    pub group: String,
    pub bin: usize,
    pub count: usize,
    /// Mean `label - score`; zero for empty cells.
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n_claims: usize,
    pub asce: f64,
    pub gasce_per_group: BTreeMap<String, f64>,
    pub gasce_max: f64,
    pub gasce_mean: f64,
    pub brier_marginal: f64,
    pub brier_per_group: BTreeMap<String, f64>,
    pub brier_group_max: f64,
    pub brier_group_mean: f64,
    /// Groups passing the size floor but without test claims.
    pub empty_groups: Vec<String>,
    pub bin_diagnostics: Vec<BinDiagnostic>,
}

/// Evaluates scores on `claims`, whose groups are taken as already filtered.
pub fn calibration_report(scores: &[f64], claims: &ClaimSet, grid: &LevelSetGrid) -> Result<CalibrationReport> {
    let labels = claims.labels();
    let groups = claims.groups();
    let masks: Vec<Vec<bool>> = (0..groups.len()).map(|g| claims.mask(g).to_vec()).collect();
    let asce = asce(scores, labels, grid)?;
    let g = gasce(scores, labels, grid, groups, &masks)?;
    let b = group_brier(scores, labels, groups, &masks)?;

    let mut bin_diagnostics = Vec::new();
    let mut push = |name: &str, bins: Vec<(usize, f64)>| {
        for (bin, (count, sum)) in bins.into_iter().enumerate() {
            bin_diagnostics.push(BinDiagnostic {
                group: name.to_string(),
                bin,
                count,
                bias: if count == 0 { 0.0 } else { sum / count as f64 },
            });
        }
    };
    push("all", bin_sums(scores, labels, grid, |_| true));
    for (group, mask) in groups.iter().zip(&masks) {
        push(&group.name, bin_sums(scores, labels, grid, |i| mask[i]));
    }

    Ok(CalibrationReport {
        n_claims: scores.len(),
        asce,
        gasce_per_group: g.per_group,
        gasce_max: g.max,
        gasce_mean: g.mean,
        brier_marginal: brier(scores, labels)?,
        brier_per_group: b.per_group,
        brier_group_max: b.max,
        brier_group_mean: b.mean,
        empty_groups: g.empty,
        bin_diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalReport {
    pub alpha: f64,
    pub n_entities: usize,
    pub marginal_coverage: f64,
    pub coverage_error_marginal: f64,
    pub per_group_coverage: BTreeMap<String, f64>,
    pub per_group_coverage_error: BTreeMap<String, f64>,
    pub mean_group_coverage_error: f64,
    pub max_group_coverage_error: f64,
    /// Share of entities with a non-empty retained set.
    pub frac_entities_retained: f64,
    pub mean_claims_retained: f64,
}

/// Applies `rule` to every test entity and measures coverage marginally and
/// within each group of `atlas` that passes its size floor on `test`.
pub fn coverage_report(
    rule: &ThresholdRule,
    test: &[&EntityRecord],
    atlas: &GroupAtlas,
    alpha: f64,
) -> Result<ConformalReport> {
    if test.is_empty() {
        return Err(Error::InsufficientData("coverage report needs test entities".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let target = 1.0 - alpha;
    let retention: Vec<_> = test.iter().map(|e| retain(rule, e)).collect();
    let n = test.len() as f64;
    let covered = retention.iter().filter(|r| r.covered).count();
    let marginal_coverage = covered as f64 / n;

    let mut per_group_coverage = BTreeMap::new();
    let mut per_group_coverage_error = BTreeMap::new();
    for idx in atlas.retained(test) {
        let group = &atlas.groups[idx];
        let (mut members, mut hits) = (0usize, 0usize);
        for (e, r) in test.iter().zip(&retention) {
            if group.contains(&e.attributes) {
                members += 1;
                hits += usize::from(r.covered);
            }
        }
        let cov = hits as f64 / members as f64;
        per_group_coverage.insert(group.name.clone(), cov);
        per_group_coverage_error.insert(group.name.clone(), (cov - target).abs());
    }
    let errors: Vec<f64> = per_group_coverage_error.values().copied().collect();
    let (mean_group_coverage_error, max_group_coverage_error) = if errors.is_empty() {
        (0.0, 0.0)
    } else {
        (
            errors.iter().sum::<f64>() / errors.len() as f64,
            errors.iter().copied().fold(0.0, f64::max),
        )
    };

    Ok(ConformalReport {
        alpha,
        n_entities: test.len(),
        marginal_coverage,
        coverage_error_marginal: (marginal_coverage - target).abs(),
        per_group_coverage,
        per_group_coverage_error,
        mean_group_coverage_error,
        max_group_coverage_error,
        frac_entities_retained: retention.iter().filter(|r| !r.retained.is_empty()).count() as f64 / n,
        mean_claims_retained: retention.iter().map(|r| r.retained.len()).sum::<usize>() as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub group: String,
    pub a: f64,
    pub b: f64,
    /// `b - a`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    /// Ascending by delta, ties by group name.
    pub rows: Vec<DeltaRow>,
    /// The `k` largest deltas, largest first.
    pub top: Vec<DeltaRow>,
    pub top_mean: f64,
    /// The `k` smallest deltas, smallest first.
    pub bottom: Vec<DeltaRow>,
    pub bottom_mean: f64,
}

/// Per-group difference `b - a` of one metric under two methods.
pub fn delta_table(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>, k: usize) -> Result<DeltaTable> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        let only_a: Vec<&String> = a.keys().filter(|g| !b.contains_key(*g)).collect();
        let only_b: Vec<&String> = b.keys().filter(|g| !a.contains_key(*g)).collect();
        return Err(Error::InvalidArgument(format!(
            "group sets differ: only in first {only_a:?}, only in second {only_b:?}"
        )));
    }
    let mut rows: Vec<DeltaRow> = a
        .iter()
        .map(|(group, &va)| {
            let vb = b[group];
            DeltaRow {
                group: group.clone(),
                a: va,
                b: vb,
                delta: vb - va,
            }
        })
        .collect();
    rows.sort_by(|x, y| x.delta.total_cmp(&y.delta).then_with(|| x.group.cmp(&y.group)));
    let k = k.min(rows.len());
    let bottom: Vec<DeltaRow> = rows[..k].to_vec();
    let top: Vec<DeltaRow> = rows.iter().rev().take(k).cloned().collect();
    let mean = |r: &[DeltaRow]| {
        if r.is_empty() {
            0.0
        } else {
            r.iter().map(|x| x.delta).sum::<f64>() / r.len() as f64
        }
    };
    Ok(DeltaTable {
        top_mean: mean(&top),
        bottom_mean: mean(&bottom),
        rows,
        top,
        bottom,
    })
}

/// Sample mean and its standard error (zero for fewer than two values).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
