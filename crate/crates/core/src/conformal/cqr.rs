use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_alpha, conformal_quantile_f64, quantile_solver, safe_threshold, ThresholdRule};
use crate::dataset::{EntityRecord, GroupAtlas, GroupDef};
use crate::error::{Error, Result};
use crate::solvers::{cross_validate_penalty, fit_quantile, CvOutcome, FitConfig, Features, LinearModel};

/// Sorted claim scores resampled to a fixed length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector(pub Vec<f64>);

/// Sorts `scores` ascending, places them at `0, 1/(c-1), ..., 1` and reads
/// the piecewise-linear interpolant at `K` evenly spaced points. A single
/// score gives a constant vector.
pub fn interpolate_scores(scores: &[f64], k: usize) -> Result<ScoreVector> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("score vector length must be at least 2, got {k}")));
    }
    if scores.is_empty() {
        return Err(Error::InvalidArgument("cannot interpolate an empty score list".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let c = sorted.len();
    if c == 1 {
        return Ok(ScoreVector(vec![sorted[0]; k]));
    }
    let span = (c - 1) as f64;
    let values = (0..k)
        .map(|j| {
            let pos = j as f64 / (k - 1) as f64 * span;
            let lo = (pos.floor() as usize).min(c - 2);
            let frac = pos - lo as f64;
            sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
        })
        .collect();
    Ok(ScoreVector(values))
}

/// Regression features of one entity: `k` interpolated scores (zeros for an
/// entity without claims) followed by group indicators.
pub(crate) fn feature_row(entity: &EntityRecord, k: usize, groups: &[GroupDef]) -> Vec<f64> {
    let mut row = if k == 0 {
        Vec::new()
    } else if entity.claims.is_empty() {
        vec![0.0; k]
    } else {
        interpolate_scores(&entity.scores().collect::<Vec<_>>(), k).map_or_else(|_| vec![0.0; k], |v| v.0)
    };
    row.extend(groups.iter().map(|g| f64::from(u8::from(g.contains(&entity.attributes)))));
    row
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CqrOptions {
    /// Length of the interpolated score vector.
    pub k: usize,
    /// Candidate L1 penalties.
    pub cv_grid: Vec<f64>,
    pub cv_folds: usize,
    /// Seeds the fit/conformalization split and the CV folds.
    pub seed: u64,
    /// Fit only an intercept (no score or group features).
    pub intercept_only: bool,
    pub solver: FitConfig,
}

impl Default for CqrOptions {
    fn default() -> Self {
        CqrOptions {
            k: 25,
            cv_grid: vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
            cv_folds: 5,
            seed: 0,
            intercept_only: false,
            solver: quantile_solver(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqrFit {
    pub rule: ThresholdRule,
    pub penalty: f64,
    /// Present when a penalty was selected by cross-validation.
    pub cv: Option<CvOutcome>,
    /// Entities used to fit the quantile model.
    pub fit_ids: Vec<String>,
    /// Entities used to compute the conformal correction.
    pub conformal_ids: Vec<String>,
}

/// Conformalized quantile regression on the interpolated score vector.
pub fn cqr(calibration: &[&EntityRecord], alpha: f64, options: &CqrOptions) -> Result<CqrFit> {
    fit(calibration, Vec::new(), alpha, options)
}

/// Conformalized quantile regression with indicators for the single-attribute
/// groups of `groups` as extra features.
pub fn gccqr(calibration: &[&EntityRecord], groups: &GroupAtlas, alpha: f64, options: &CqrOptions) -> Result<CqrFit> {
    fit(calibration, groups.with_max_arity(1).groups, alpha, options)
}

fn fit(calibration: &[&EntityRecord], groups: Vec<GroupDef>, alpha: f64, options: &CqrOptions) -> Result<CqrFit> {
    check_alpha(alpha)?;
    if options.k < 2 {
        return Err(Error::InvalidArgument(format!("score vector length must be at least 2, got {}", options.k)));
    }
    if options.cv_grid.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
        return Err(Error::InvalidArgument("penalty grid values must be finite and non-negative".into()));
    }
    let mut pool: Vec<&EntityRecord> = calibration.iter().copied().filter(|e| !e.claims.is_empty()).collect();
    if pool.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "quantile regression needs at least 2 calibration entities with claims, got {}",
            pool.len()
        )));
    }
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(options.seed));
    let (fit_set, conformal_set) = pool.split_at(pool.len() / 2);

    let (k, groups) = if options.intercept_only { (0, Vec::new()) } else { (options.k, groups) };
    let names: Vec<String> = (0..k)
        .map(|j| format!("s{j}"))
        .chain(groups.iter().map(|g| g.name.clone()))
        .collect();
    let rows: Vec<Vec<f64>> = fit_set.iter().map(|e| feature_row(e, k, &groups)).collect();
    let features = Features::from_rows(names, &rows)?;
    let targets: Vec<f64> = fit_set.iter().map(|e| safe_threshold(e).r.as_target()).collect();
    let tau = 1.0 - alpha;

    let (penalty, cv) = if k == 0 && groups.is_empty() {
        (0.0, None)
    } else {
        match options.cv_grid.as_slice() {
            [] => (0.0, None),
            [only] => (*only, None),
            grid => {
                let outcome = cross_validate_penalty(
                    &features,
                    &targets,
                    tau,
                    grid,
                    options.cv_folds,
                    options.seed,
                    &options.solver,
                )?;
                (outcome.penalty, Some(outcome))
            }
        }
    };
    let config = FitConfig {
        l1_penalty: penalty,
        ..options.solver
    };
    let (model, report) = fit_quantile(&features, &targets, tau, &config)?;
    if !report.converged {
        log::warn!(
            "quantile regression stopped after {} iterations (residual {:.3e})",
            report.iterations,
            report.residual
        );
    }

    let residuals: Vec<f64> = conformal_set
        .iter()
        .map(|e| safe_threshold(e).r.as_target() - predict(&model, e, k, &groups))
        .collect();
    let correction = conformal_quantile_f64(&residuals, alpha)?;

    Ok(CqrFit {
        rule: ThresholdRule::LinearQuantile {
            model,
            k,
            groups,
            correction,
        },
        penalty,
        cv,
        fit_ids: fit_set.iter().map(|e| e.entity_id.clone()).collect(),
        conformal_ids: conformal_set.iter().map(|e| e.entity_id.clone()).collect(),
    })
}

fn predict(model: &LinearModel, entity: &EntityRecord, k: usize, groups: &[GroupDef]) -> f64 {
    model.predict(&feature_row(entity, k, groups))
}

#[cfg(test)]
mod tests {
    use super::super::test_support::entity;
    use super::super::{split_conformal, SafeValue};
    use super::*;
    use rand::Rng;

    #[test]
    fn interpolation_examples() {
        assert_eq!(interpolate_scores(&[0.4], 5).unwrap().0, vec![0.4; 5]);
        assert_eq!(interpolate_scores(&[1.0, 0.0], 5).unwrap().0, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let v = interpolate_scores(&[0.0, 0.2, 1.0], 5).unwrap().0;
        let expected = [0.0, 0.1, 0.2, 0.6, 1.0];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(interpolate_scores(&[], 5).is_err());
        assert!(interpolate_scores(&[0.1], 1).is_err());
    }

    fn population(n: usize, seed: u64) -> Vec<EntityRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let c = rng.gen_range(1..6);
                let claims: Vec<(f64, bool)> = (0..c)
                    .map(|_| {
                        let s: f64 = rng.gen();
                        (s, rng.gen::<f64>() < s)
                    })
                    .collect();
                let side = if i % 2 == 0 { "l" } else { "r" };
                entity(&format!("e{i}"), &claims, &[("side", side)])
            })
            .collect()
    }

    #[test]
    fn intercept_only_matches_split_conformal_on_conformal_half() {
        let ents = population(400, 1);
        let refs: Vec<&EntityRecord> = ents.iter().collect();
        let options = CqrOptions {
            intercept_only: true,
            seed: 9,
            ..CqrOptions::default()
        };
        for alpha in [0.1, 0.3, 0.5] {
            let fit = cqr(&refs, alpha, &options).unwrap();
            let half: Vec<&EntityRecord> = refs
                .iter()
                .copied()
                .filter(|e| fit.conformal_ids.contains(&e.entity_id))
                .collect();
            let sc = split_conformal(&half, alpha).unwrap();
            for e in &refs {
                assert!((fit.rule.threshold(e) - sc.threshold(e)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn halves_are_disjoint_and_cover_entities_with_claims() {
        let mut ents = population(101, 2);
        ents.push(entity("empty", &[], &[]));
        let refs: Vec<&EntityRecord> = ents.iter().collect();
        let fit = cqr(&refs, 0.2, &CqrOptions::default()).unwrap();
        assert_eq!(fit.fit_ids.len(), 50);
        assert_eq!(fit.conformal_ids.len(), 51);
        assert!(fit.fit_ids.iter().all(|id| !fit.conformal_ids.contains(id)));
        assert!(!fit.fit_ids.contains(&"empty".to_string()));
        assert!(fit.cv.is_some());
        assert!(fit.rule.threshold(&ents[101]).is_finite());
    }

    #[test]
    fn gccqr_uses_single_attribute_indicators() {
        let ents = population(200, 3);
        let refs: Vec<&EntityRecord> = ents.iter().collect();
        let atlas = crate::dataset::derive_groups(&ents, 2, 0.0).unwrap();
        let fit = gccqr(&refs, &atlas, 0.2, &CqrOptions::default()).unwrap();
        let ThresholdRule::LinearQuantile { groups, model, .. } = &fit.rule else { panic!() };
        assert_eq!(groups.len(), 2);
        assert_eq!(model.weights.len(), 27);
    }

    #[test]
    fn deterministic_given_seed() {
        let ents = population(150, 4);
        let refs: Vec<&EntityRecord> = ents.iter().collect();
        let a = cqr(&refs, 0.2, &CqrOptions::default()).unwrap();
        let b = cqr(&refs, 0.2, &CqrOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_true_targets_become_zero() {
        assert_eq!(SafeValue::AllTrue.as_target(), 0.0);
        let ents: Vec<EntityRecord> = (0..10).map(|i| entity(&i.to_string(), &[(0.5, true)], &[])).collect();
        let refs: Vec<&EntityRecord> = ents.iter().collect();
        let fit = cqr(&refs, 0.2, &CqrOptions { cv_folds: 2, ..CqrOptions::default() }).unwrap();
        assert!(fit.rule.threshold(&ents[0]).abs() < 1e-6);
    }

    #[test]
    fn rejects_tiny_input() {
        let ents = [entity("a", &[(0.5, false)], &[])];
        let refs: Vec<&EntityRecord> = ents.iter().collect();
        assert!(cqr(&refs, 0.2, &CqrOptions::default()).is_err());
    }
}
