//! Output-level conformal prediction: choose a per-entity score threshold
//! and keep the claims scoring at or above it, so that with probability
//! `1 - alpha` every kept claim is correct.
//!
//! An entity's safe threshold `r` is the largest score among its incorrect
//! claims. A threshold `q` yields an all-correct retained set exactly when
//! `q > r`, when the entity has no incorrect claim, or when nothing is
//! retained.

mod cqr;
mod split;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::{EntityRecord, GroupAtlas, GroupDef};
use crate::error::{Error, Result};
use crate::solvers::{FitConfig, LinearModel};

pub use cqr::{cqr, gccqr, interpolate_scores, CqrFit, CqrOptions, ScoreVector};
pub use split::{mvsc, mvsc_with_support, split_conformal, MvscFit, MvscStop};

/// Value of `r(X, Y)` for one entity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafeValue {
    /// Every claim is correct: any threshold is safe. Orders below all reals.
    AllTrue,
    At(f64),
}

impl SafeValue {
    /// Whether threshold `q` leaves only correct claims.
    pub fn is_covered_by(self, q: f64) -> bool {
        match self {
            SafeValue::AllTrue => true,
            SafeValue::At(r) => q > r,
        }
    }

    /// Real stand-in used as a regression target and in residuals: scores
    /// live in `[0, 1]`, so threshold 0 is as permissive as any.
    pub fn as_target(self) -> f64 {
        match self {
            SafeValue::AllTrue => 0.0,
            SafeValue::At(r) => r,
        }
    }

    fn total_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (SafeValue::AllTrue, SafeValue::AllTrue) => Ordering::Equal,
            (SafeValue::AllTrue, SafeValue::At(_)) => Ordering::Less,
            (SafeValue::At(_), SafeValue::AllTrue) => Ordering::Greater,
            (SafeValue::At(a), SafeValue::At(b)) => a.total_cmp(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeThreshold {
    pub entity_id: String,
    pub r: SafeValue,
}

/// Largest score among the entity's incorrect claims, or `AllTrue`.
/// Entities without claims are vacuously `AllTrue`.
pub fn safe_threshold(entity: &EntityRecord) -> SafeThreshold {
    let r = entity
        .claims
        .iter()
        .filter(|c| !c.label)
        .map(|c| c.score)
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))));
    SafeThreshold {
        entity_id: entity.entity_id.clone(),
        r: r.map_or(SafeValue::AllTrue, SafeValue::At),
    }
}

/// Rank `min(ceil((n + 1)(1 - alpha)), n)` of the finite-sample conformal
/// quantile.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    (((n as f64 + 1.0) * (1.0 - alpha) - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// The conformal quantile of safe values as a real threshold. An `AllTrue`
/// quantile means no threshold is needed; it maps to 0.
pub fn conformal_quantile(values: &[SafeValue], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if values.is_empty() {
        return Err(Error::InsufficientData("conformal quantile of an empty sample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(SafeValue::total_cmp);
    Ok(sorted[conformal_rank(sorted.len(), alpha) - 1].as_target())
}

/// Same rank on plain reals.
pub(crate) fn conformal_quantile_f64(values: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if values.is_empty() {
        return Err(Error::InsufficientData("conformal quantile of an empty sample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[conformal_rank(sorted.len(), alpha) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPatch {
    pub group: GroupDef,
    pub q: f64,
}

/// A fitted per-entity threshold function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdRule {
    Constant {
        q: f64,
    },
    /// `base`, overwritten by the last patch whose group contains the entity.
    Grouped {
        base: f64,
        patches: Vec<GroupPatch>,
    },
    /// `model(score vector, group indicators) + correction`.
    LinearQuantile {
        model: LinearModel,
        k: usize,
        groups: Vec<GroupDef>,
        correction: f64,
    },
}

impl ThresholdRule {
    pub fn kind(&self) -> &'static str {
        match self {
            ThresholdRule::Constant { .. } => "constant",
            ThresholdRule::Grouped { .. } => "grouped",
            ThresholdRule::LinearQuantile { .. } => "linear_quantile",
        }
    }

    pub fn threshold(&self, entity: &EntityRecord) -> f64 {
        match self {
            ThresholdRule::Constant { q } => *q,
            ThresholdRule::Grouped { base, patches } => patches
                .iter()
                .rev()
                .find(|p| p.group.contains(&entity.attributes))
                .map_or(*base, |p| p.q),
            ThresholdRule::LinearQuantile {
                model,
                k,
                groups,
                correction,
            } => {
                let x = cqr::feature_row(entity, *k, groups);
                model.predict(&x) + correction
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&RuleDocument {
            version: RULE_FORMAT_VERSION,
            rule: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: RuleDocument = serde_json::from_str(text)?;
        if doc.version != RULE_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported threshold rule format version {}",
                doc.version
            )));
        }
        Ok(doc.rule)
    }
}

pub const RULE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RuleDocument {
    version: u32,
    rule: ThresholdRule,
}

/// Claims kept for one entity.
#[derive(Debug, Clone, PartialEq)]
pub struct Retention {
    pub threshold: f64,
    /// Indices into the entity's claim list.
    pub retained: Vec<usize>,
    /// All retained claims are correct (vacuously true when none are).
    pub covered: bool,
}

/// Keeps the claims with `score >= threshold`.
pub fn retain(rule: &ThresholdRule, entity: &EntityRecord) -> Retention {
    let threshold = rule.threshold(entity);
    let retained: Vec<usize> = entity
        .claims
        .iter()
        .enumerate()
        .filter_map(|(i, c)| (c.score >= threshold).then_some(i))
        .collect();
    let covered = retained.iter().all(|&i| entity.claims[i].label);
    Retention {
        threshold,
        retained,
        covered,
    }
}

/// Knobs shared by the conformal strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalSettings {
    /// Patching iterations for MVSC.
    pub max_iter: usize,
    /// Groups with fewer calibration entities are never patched by MVSC.
    pub min_group_support: usize,
    pub cqr: CqrOptions,
}

impl Default for ConformalSettings {
    fn default() -> Self {
        ConformalSettings {
            max_iter: 100,
            min_group_support: 10,
            cqr: CqrOptions::default(),
        }
    }
}

/// An output-level conformal method.
pub trait ConformalMethod: Send + Sync {
    fn name(&self) -> &'static str;

    fn group_aware(&self) -> bool;

    fn fit(
        &self,
        calibration: &[&EntityRecord],
        groups: &GroupAtlas,
        alpha: f64,
        settings: &ConformalSettings,
    ) -> Result<ThresholdRule>;
}

struct SplitConformal;
struct MultivalidSplitConformal;
struct ConformalizedQuantileRegression;
struct GroupConditionalCqr;

impl ConformalMethod for SplitConformal {
    fn name(&self) -> &'static str {
        "SC"
    }
    fn group_aware(&self) -> bool {
        false
    }
    fn fit(&self, calibration: &[&EntityRecord], _: &GroupAtlas, alpha: f64, _: &ConformalSettings) -> Result<ThresholdRule> {
        split_conformal(calibration, alpha)
    }
}

impl ConformalMethod for MultivalidSplitConformal {
    fn name(&self) -> &'static str {
        "MVSC"
    }
    fn group_aware(&self) -> bool {
        true
    }
    fn fit(
        &self,
        calibration: &[&EntityRecord],
        groups: &GroupAtlas,
        alpha: f64,
        settings: &ConformalSettings,
    ) -> Result<ThresholdRule> {
        mvsc_with_support(calibration, groups, alpha, settings.max_iter, settings.min_group_support)
            .map(|fit| fit.rule)
    }
}

impl ConformalMethod for ConformalizedQuantileRegression {
    fn name(&self) -> &'static str {
        "CQR"
    }
    fn group_aware(&self) -> bool {
        false
    }
    fn fit(&self, calibration: &[&EntityRecord], _: &GroupAtlas, alpha: f64, settings: &ConformalSettings) -> Result<ThresholdRule> {
        cqr(calibration, alpha, &settings.cqr).map(|fit| fit.rule)
    }
}

impl ConformalMethod for GroupConditionalCqr {
    fn name(&self) -> &'static str {
        "GCCQR"
    }
    fn group_aware(&self) -> bool {
        true
    }
    fn fit(
        &self,
        calibration: &[&EntityRecord],
        groups: &GroupAtlas,
        alpha: f64,
        settings: &ConformalSettings,
    ) -> Result<ThresholdRule> {
        gccqr(calibration, groups, alpha, &settings.cqr).map(|fit| fit.rule)
    }
}

/// Conformal strategies keyed by name.
pub struct ConformalRegistry {
    methods: Vec<Box<dyn ConformalMethod>>,
}

impl ConformalRegistry {
    pub fn empty() -> Self {
        ConformalRegistry { methods: Vec::new() }
    }

    /// SC, MVSC, CQR and GCCQR.
    pub fn builtin() -> Self {
        let mut registry = ConformalRegistry::empty();
        registry.register(Box::new(SplitConformal));
        registry.register(Box::new(MultivalidSplitConformal));
        registry.register(Box::new(ConformalizedQuantileRegression));
        registry.register(Box::new(GroupConditionalCqr));
        registry
    }

    /// Adds a strategy, replacing any existing one with the same name.
    pub fn register(&mut self, method: Box<dyn ConformalMethod>) {
        self.methods.retain(|m| m.name() != method.name());
        self.methods.push(method);
    }

    pub fn get(&self, name: &str) -> Result<&dyn ConformalMethod> {
        self.methods
            .iter()
            .find(|m| m.name() == name)
            .map(|m| m.as_ref())
            .ok_or_else(|| Error::UnknownMethod(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.methods.iter().any(|m| m.name() == name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.methods.iter().map(|m| m.name()).collect()
    }
}

impl Default for ConformalRegistry {
    fn default() -> Self {
        ConformalRegistry::builtin()
    }
}

/// Default solver settings for the quantile fits.
pub(crate) fn quantile_solver() -> FitConfig {
    FitConfig {
        max_iter: 5000,
        tol: 1e-5,
        l1_penalty: 0.0,
        l2_penalty: 0.0,
    }
}
