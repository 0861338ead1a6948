//! Claim-level score calibration.
//!
//! Level sets are defined by rounding a score to the nearest point of the
//! grid `{0, 1/m, ..., 1}` (ties go to the lower point). Biases are always
//! measured against the unrounded score: the bias of a level set is the mean
//! of `label - score` over the claims rounding into it.
//!
//! Methods are strategies behind [`Calibrator`] and are looked up by name in
//! a [`CalibratorRegistry`].

mod histogram;
mod linear;

use serde::{Deserialize, Serialize};

use crate::dataset::{EntityRecord, GroupDef};
use crate::error::{Error, Result};
use crate::solvers::{sigmoid, LinearModel};

pub use histogram::{
    histogram_binning, ighb, ighb_with_support, HistogramBin, IghbFit, IghbStop, Patch,
};
pub use linear::{gculr, platt_scaling};

/// Equally spaced level-set grid `{i/m : i = 0..=m}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSetGrid {
    m: usize,
}

impl LevelSetGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("grid needs m >= 1".into()));
        }
        Ok(LevelSetGrid { m })
    }

    /// Grid with `n` level sets (`m = n - 1`).
    pub fn with_level_sets(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument("need at least 2 level sets".into()));
        }
        LevelSetGrid::new(n - 1)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_bins(&self) -> usize {
        self.m + 1
    }

    pub fn value(&self, bin: usize) -> f64 {
        bin as f64 / self.m as f64
    }

    pub fn values(&self) -> Vec<f64> {
        (0..=self.m).map(|i| self.value(i)).collect()
    }

    /// Index of the nearest grid point; exact midpoints round down and
    /// out-of-range scores map to the end points.
    pub fn index(&self, score: f64) -> usize {
        let scaled = score * self.m as f64 - 0.5;
        if !(scaled > 0.0) {
            return 0;
        }
        (scaled.ceil() as usize).min(self.m)
    }
}

impl Default for LevelSetGrid {
    /// Five level sets: `{0, 0.25, 0.5, 0.75, 1}`.
    fn default() -> Self {
        LevelSetGrid { m: 4 }
    }
}

/// Flattened claims with per-group membership masks, the input every
/// calibrator fits on.
#[derive(Debug, Clone)]
pub struct ClaimSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
    groups: Vec<GroupDef>,
    masks: Vec<Vec<bool>>,
    members: Vec<Vec<usize>>,
}

impl ClaimSet {
    /// Claims of `entities` in order; a claim belongs to a group when its
    /// entity does.
    pub fn new(entities: &[&EntityRecord], groups: &[GroupDef]) -> Self {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        let mut masks = vec![Vec::new(); groups.len()];
        for entity in entities {
            let bits: Vec<bool> = groups.iter().map(|g| g.contains(&entity.attributes)).collect();
            for claim in &entity.claims {
                scores.push(claim.score);
                labels.push(claim.label);
                for (mask, &bit) in masks.iter_mut().zip(&bits) {
                    mask.push(bit);
                }
            }
        }
        ClaimSet::assemble(scores, labels, groups.to_vec(), masks)
    }

    /// Builds a set from explicit membership masks (one per group, aligned
    /// with `scores`).
    pub fn from_parts(
        scores: Vec<f64>,
        labels: Vec<bool>,
        groups: Vec<GroupDef>,
        masks: Vec<Vec<bool>>,
    ) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(Error::InvalidArgument("scores and labels differ in length".into()));
        }
        if masks.len() != groups.len() || masks.iter().any(|m| m.len() != scores.len()) {
            return Err(Error::InvalidArgument("membership masks do not match the claims".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument("scores must be finite".into()));
        }
        Ok(ClaimSet::assemble(scores, labels, groups, masks))
    }

    fn assemble(scores: Vec<f64>, labels: Vec<bool>, groups: Vec<GroupDef>, masks: Vec<Vec<bool>>) -> Self {
        let members = masks
            .iter()
            .map(|m| m.iter().enumerate().filter_map(|(i, &b)| b.then_some(i)).collect())
            .collect();
        ClaimSet {
            scores,
            labels,
            groups,
            masks,
            members,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn groups(&self) -> &[GroupDef] {
        &self.groups
    }

    pub fn mask(&self, group: usize) -> &[bool] {
        &self.masks[group]
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.members[group]
    }

    /// Same claims and memberships with replaced scores.
    pub fn with_scores(&self, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != self.len() {
            return Err(Error::InvalidArgument("score vector length mismatch".into()));
        }
        Ok(ClaimSet {
            scores,
            ..self.clone()
        })
    }

    fn group_index(&self, group: &GroupDef) -> Option<usize> {
        self.groups.iter().position(|g| g.name == group.name)
    }
}

/// A fitted score transformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CalibratedScorer {
    /// One correction per level set.
    Histogram {
        grid: LevelSetGrid,
        bins: Vec<HistogramBin>,
    },
    /// Ordered additive patches on (level set, group) cells.
    PatchedHistogram {
        grid: LevelSetGrid,
        patches: Vec<Patch>,
    },
    /// `sigmoid(intercept + w0 * score + sum_g w_g * [member of g])`.
    LinearLogistic {
        model: LinearModel,
        groups: Vec<GroupDef>,
    },
}

impl CalibratedScorer {
    /// The scorer that leaves every score unchanged.
    pub fn identity(grid: LevelSetGrid) -> Self {
        CalibratedScorer::PatchedHistogram {
            grid,
            patches: Vec::new(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CalibratedScorer::Histogram { .. } => "histogram",
            CalibratedScorer::PatchedHistogram { .. } => "patched_histogram",
            CalibratedScorer::LinearLogistic { .. } => "linear_logistic",
        }
    }

    /// Calibrated value of one raw score; `is_member` answers group
    /// membership for the claim. Output is clamped to `[0, 1]`.
    pub fn calibrate(&self, score: f64, is_member: impl Fn(&GroupDef) -> bool) -> f64 {
        let out = match self {
            CalibratedScorer::Histogram { grid, bins } => {
                bins[grid.index(score)].value.unwrap_or(score)
            }
            CalibratedScorer::PatchedHistogram { grid, patches } => {
                let mut s = score;
                for patch in patches {
                    if grid.index(s) == patch.bin && is_member(&patch.group) {
                        s += patch.delta;
                    }
                }
                s
            }
            CalibratedScorer::LinearLogistic { model, groups } => {
                let mut x = Vec::with_capacity(groups.len() + 1);
                x.push(score);
                x.extend(groups.iter().map(|g| f64::from(u8::from(is_member(g)))));
                sigmoid(model.predict(&x))
            }
        };
        out.clamp(0.0, 1.0)
    }

    /// Calibrated scores of every claim of `entities`, flattened in order.
    pub fn apply(&self, entities: &[&EntityRecord]) -> Vec<f64> {
        entities
            .iter()
            .flat_map(|e| {
                e.claims
                    .iter()
                    .map(move |c| self.calibrate(c.score, |g| g.contains(&e.attributes)))
            })
            .collect()
    }

    /// Calibrated scores of a claim set. Every group the scorer refers to
    /// must be present in the set.
    pub fn apply_claims(&self, claims: &ClaimSet) -> Result<Vec<f64>> {
        let referenced: Vec<&GroupDef> = match self {
            CalibratedScorer::Histogram { .. } => Vec::new(),
            CalibratedScorer::PatchedHistogram { patches, .. } => {
                patches.iter().map(|p| &p.group).collect()
            }
            CalibratedScorer::LinearLogistic { groups, .. } => groups.iter().collect(),
        };
        for g in referenced {
            if claims.group_index(g).is_none() {
                return Err(Error::InvalidArgument(format!(
                    "claim set has no membership for group `{}`",
                    g.name
                )));
            }
        }
        Ok((0..claims.len())
            .map(|i| {
                self.calibrate(claims.scores[i], |g| {
                    claims.group_index(g).is_some_and(|k| claims.masks[k][i])
                })
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ScorerDocument {
            version: SCORER_FORMAT_VERSION,
            scorer: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ScorerDocument = serde_json::from_str(text)?;
        if doc.version != SCORER_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported scorer format version {}",
                doc.version
            )));
        }
        Ok(doc.scorer)
    }
}

pub const SCORER_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ScorerDocument {
    version: u32,
    scorer: CalibratedScorer,
}

/// Knobs shared by the calibration strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub grid: LevelSetGrid,
    /// Patching iterations for IGHB.
    pub max_iter: usize,
    /// Cells with fewer calibration claims are never patched by IGHB.
    pub min_cell_support: usize,
    /// Inverse L2 strength of the logistic fits: the penalty is
    /// `|w|^2 / (2 C n)` on top of the mean cross-entropy.
    pub logistic_c: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            grid: LevelSetGrid::default(),
            max_iter: 100,
            min_cell_support: 10,
            logistic_c: 1.0,
        }
    }
}

/// A claim-level calibration method.
pub trait Calibrator: Send + Sync {
    fn name(&self) -> &'static str;

    /// Whether the method uses group memberships.
    fn group_aware(&self) -> bool;

    fn fit(&self, claims: &ClaimSet, settings: &CalibrationSettings) -> Result<CalibratedScorer>;
}

struct HistogramBinning;
struct IterativeGroupedHistogramBinning;
struct PlattScaling;
struct GroupConditionalLogistic;

impl Calibrator for HistogramBinning {
    fn name(&self) -> &'static str {
        "HB"
    }
    fn group_aware(&self) -> bool {
        false
    }
    fn fit(&self, claims: &ClaimSet, settings: &CalibrationSettings) -> Result<CalibratedScorer> {
        histogram_binning(claims, settings.grid)
    }
}

impl Calibrator for IterativeGroupedHistogramBinning {
    fn name(&self) -> &'static str {
        "IGHB"
    }
    fn group_aware(&self) -> bool {
        true
    }
    fn fit(&self, claims: &ClaimSet, settings: &CalibrationSettings) -> Result<CalibratedScorer> {
        ighb_with_support(claims, settings.grid, settings.max_iter, settings.min_cell_support)
            .map(|fit| fit.scorer)
    }
}

impl Calibrator for PlattScaling {
    fn name(&self) -> &'static str {
        "PS"
    }
    fn group_aware(&self) -> bool {
        false
    }
    fn fit(&self, claims: &ClaimSet, settings: &CalibrationSettings) -> Result<CalibratedScorer> {
        platt_scaling(claims, settings.logistic_c)
    }
}

impl Calibrator for GroupConditionalLogistic {
    fn name(&self) -> &'static str {
        "GCULR"
    }
    fn group_aware(&self) -> bool {
        true
    }
    fn fit(&self, claims: &ClaimSet, settings: &CalibrationSettings) -> Result<CalibratedScorer> {
        gculr(claims, settings.logistic_c)
    }
}

/// Calibration strategies keyed by name.
pub struct CalibratorRegistry {
    methods: Vec<Box<dyn Calibrator>>,
}

impl CalibratorRegistry {
    pub fn empty() -> Self {
        CalibratorRegistry { methods: Vec::new() }
    }

    /// HB, IGHB, PS and GCULR.
    pub fn builtin() -> Self {
        let mut registry = CalibratorRegistry::empty();
        registry.register(Box::new(HistogramBinning));
        registry.register(Box::new(IterativeGroupedHistogramBinning));
        registry.register(Box::new(PlattScaling));
        registry.register(Box::new(GroupConditionalLogistic));
        registry
    }

    /// Adds a strategy, replacing any existing one with the same name.
    pub fn register(&mut self, method: Box<dyn Calibrator>) {
        self.methods.retain(|m| m.name() != method.name());
        self.methods.push(method);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Calibrator> {
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

impl Default for CalibratorRegistry {
    fn default() -> Self {
        CalibratorRegistry::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rounding() {
        let grid = LevelSetGrid::default();
        assert_eq!(grid.values(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(grid.index(0.0), 0);
        assert_eq!(grid.index(0.125), 0); // tie goes down
        assert_eq!(grid.index(0.13), 1);
        assert_eq!(grid.index(0.5), 2);
        assert_eq!(grid.index(0.875), 3);
        assert_eq!(grid.index(0.9), 4);
        assert_eq!(grid.index(1.0), 4);
        assert_eq!(grid.index(1.7), 4);
        assert_eq!(grid.index(-0.3), 0);
        assert!(LevelSetGrid::new(0).is_err());
        assert_eq!(LevelSetGrid::with_level_sets(5).unwrap(), grid);
    }

    fn group(name: &str) -> GroupDef {
        GroupDef::new(vec![("g".into(), name.into())])
    }

    #[test]
    fn identity_scorer_is_identity() {
        let scorer = CalibratedScorer::identity(LevelSetGrid::default());
        for s in [0.0, 0.13, 0.5, 0.99] {
            assert_eq!(scorer.calibrate(s, |_| true), s);
        }
    }

    #[test]
    fn single_patch_gates_on_group() {
        let scorer = CalibratedScorer::PatchedHistogram {
            grid: LevelSetGrid::default(),
            patches: vec![Patch {
                bin: 2,
                group: group("a"),
                delta: 0.25,
            }],
        };
        assert_eq!(scorer.calibrate(0.5, |g| g.name == "g=a"), 0.75);
        assert_eq!(scorer.calibrate(0.5, |_| false), 0.5);
        // other bins untouched
        assert_eq!(scorer.calibrate(0.25, |_| true), 0.25);
    }

    #[test]
    fn patches_replay_in_order_with_rerounding() {
        let scorer = CalibratedScorer::PatchedHistogram {
            grid: LevelSetGrid::default(),
            patches: vec![
                Patch { bin: 2, group: GroupDef::everything(), delta: 0.25 },
                Patch { bin: 3, group: GroupDef::everything(), delta: 0.3 },
            ],
        };
        // 0.5 -> 0.75 (now in bin 3) -> 1.05 -> clamped
        assert_eq!(scorer.calibrate(0.5, |_| true), 1.0);
        // 0.7 starts in bin 3: first patch skipped
        assert!((scorer.calibrate(0.7, |_| true) - 1.0).abs() < 1e-12);
        assert_eq!(scorer.calibrate(0.3, |_| true), 0.3);
    }

    #[test]
    fn scorer_json_round_trip() {
        let scorer = CalibratedScorer::LinearLogistic {
            model: LinearModel {
                intercept: -0.3,
                weights: vec![2.0, 0.1],
                feature_names: vec!["score".into(), "g=a".into()],
            },
            groups: vec![group("a")],
        };
        let json = scorer.to_json().unwrap();
        assert!(json.contains("\"version\": 1"));
        assert_eq!(CalibratedScorer::from_json(&json).unwrap(), scorer);
        let bumped = json.replace("\"version\": 1", "\"version\": 9");
        assert!(CalibratedScorer::from_json(&bumped).is_err());
    }

    #[test]
    fn registry_lookup() {
        let registry = CalibratorRegistry::builtin();
        assert_eq!(registry.names(), vec!["HB", "IGHB", "PS", "GCULR"]);
        assert!(registry.get("IGHB").unwrap().group_aware());
        assert!(matches!(registry.get("isotonic"), Err(Error::UnknownMethod(_))));
    }

    #[test]
    fn apply_claims_requires_groups() {
        let set = ClaimSet::from_parts(vec![0.5], vec![true], vec![], vec![]).unwrap();
        let scorer = CalibratedScorer::PatchedHistogram {
            grid: LevelSetGrid::default(),
            patches: vec![Patch { bin: 2, group: group("a"), delta: 0.1 }],
        };
        assert!(scorer.apply_claims(&set).is_err());
    }
}
