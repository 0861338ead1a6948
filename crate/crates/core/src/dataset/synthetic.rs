//! Synthetic claim populations with known miscalibration.
//!
//! Each claim gets a true correctness probability `p`, drawn uniformly and
//! shifted by group effects. The label is `Bernoulli(p)` and the reported
//! score is a distortion of `p`, optionally shifted per group. The expected
//! bias `E[p - score]` of every effect group is returned as ground truth.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Attributes, ClaimRecord, EntityRecord, GroupDef};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_entities: usize,
    pub claims_min: usize,
    pub claims_max: usize,
    #[serde(default = "default_prob_low")]
    pub prob_low: f64,
    #[serde(default = "default_prob_high")]
    pub prob_high: f64,
    #[serde(default)]
    pub distortion: ScoreDistortion,
    #[serde(default)]
    pub attributes: Vec<AttributeSpec>,
    #[serde(default)]
    pub effects: Vec<GroupEffect>,
}

fn default_prob_low() -> f64 {
    0.0
}

fn default_prob_high() -> f64 {
    1.0
}

/// Global map from true probability to reported score.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreDistortion {
    #[default]
    Identity,
    /// `sigmoid(factor * logit(p))`; factor > 1 is overconfident.
    Sharpen { factor: f64 },
    /// `p^exponent`.
    Power { exponent: f64 },
    /// `slope * p + intercept`.
    Affine { slope: f64, intercept: f64 },
}

impl ScoreDistortion {
    pub fn apply(&self, p: f64) -> f64 {
        match *self {
            ScoreDistortion::Identity => p,
            ScoreDistortion::Sharpen { factor } => {
                let p = p.clamp(1e-12, 1.0 - 1e-12);
                let logit = (p / (1.0 - p)).ln();
                1.0 / (1.0 + (-factor * logit).exp())
            }
            ScoreDistortion::Power { exponent } => p.powf(exponent),
            ScoreDistortion::Affine { slope, intercept } => slope * p + intercept,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    pub name: String,
    pub values: Vec<String>,
    /// Sampling weights aligned with `values`; uniform when omitted.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Probability that an entity carries the attribute at all.
    #[serde(default = "default_presence")]
    pub presence: f64,
}

fn default_presence() -> f64 {
    1.0
}

/// Shifts applied to the members of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupEffect {
    /// Conjunction of `attribute = value` conditions.
    pub group: BTreeMap<String, String>,
    /// Added to the true correctness probability.
    #[serde(default)]
    pub prob_offset: f64,
    /// Added to the reported score after the global distortion.
    #[serde(default)]
    pub score_offset: f64,
}

impl GroupEffect {
    pub fn group_def(&self) -> GroupDef {
        GroupDef::new(
            self.group
                .iter()
                .map(|(a, v)| (a.clone(), v.clone()))
                .collect(),
        )
    }
}

/// Realized bias of one group in a generated population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTruth {
    pub group: String,
    pub n_claims: usize,
    /// Mean of `p - score` over member claims: the bias a perfect estimator
    /// of `E[Y - score]` would report.
    pub bias: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub seed: u64,
    pub entities: Vec<EntityRecord>,
    /// True probability of every claim, flattened in entity/claim order.
    pub true_probabilities: Vec<f64>,
    /// Ground truth for the whole population (`all`) and each effect group.
    pub truth: Vec<GroupTruth>,
    pub warnings: Vec<String>,
}

impl SyntheticSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SyntheticSpec =
            toml::from_str(text).map_err(|e| Error::Config(format!("synthetic spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("synthetic spec: {msg}")));
        if self.n_entities == 0 {
            return fail("n_entities must be positive".into());
        }
        if self.claims_min > self.claims_max {
            return fail(format!(
                "claims_min ({}) exceeds claims_max ({})",
                self.claims_min, self.claims_max
            ));
        }
        if !(0.0..=1.0).contains(&self.prob_low)
            || !(0.0..=1.0).contains(&self.prob_high)
            || self.prob_low > self.prob_high
        {
            return fail(format!(
                "probability range [{}, {}] must be an interval inside [0, 1]",
                self.prob_low, self.prob_high
            ));
        }
        for attr in &self.attributes {
            if attr.values.is_empty() {
                return fail(format!("attribute `{}` has no values", attr.name));
            }
            if let Some(w) = &attr.weights {
                if w.len() != attr.values.len() || w.iter().any(|x| !(*x >= 0.0)) {
                    return fail(format!("attribute `{}` has invalid weights", attr.name));
                }
            }
            if !(0.0..=1.0).contains(&attr.presence) {
                return fail(format!("attribute `{}` presence outside [0, 1]", attr.name));
            }
        }
        Ok(())
    }
}

/// Generates a population from `spec`; identical `(spec, seed)` pairs give
/// identical output.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samplers = spec
        .attributes
        .iter()
        .map(|a| {
            let weights = a.weights.clone().unwrap_or_else(|| vec![1.0; a.values.len()]);
            WeightedIndex::new(&weights).map_err(|e| {
                Error::Config(format!("synthetic spec: attribute `{}`: {e}", a.name))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let effect_groups: Vec<GroupDef> = spec.effects.iter().map(GroupEffect::group_def).collect();

    let mut entities = Vec::with_capacity(spec.n_entities);
    let mut true_probabilities = Vec::new();
    let mut prob_clamps = 0usize;
    let mut score_clamps = 0usize;
    // (count, sum of p - score) for `all` followed by each effect group
    let mut tallies = vec![(0usize, 0.0f64); effect_groups.len() + 1];

    for e in 0..spec.n_entities {
        let mut attributes = Attributes::new();
        for (attr, sampler) in spec.attributes.iter().zip(&samplers) {
            if rng.gen::<f64>() < attr.presence {
                attributes.insert(attr.name.clone(), attr.values[sampler.sample(&mut rng)].clone());
            }
        }
        let active: Vec<usize> = effect_groups
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.contains(&attributes).then_some(i))
            .collect();
        let prob_shift: f64 = active.iter().map(|&i| spec.effects[i].prob_offset).sum();
        let score_shift: f64 = active.iter().map(|&i| spec.effects[i].score_offset).sum();

        let entity_id = format!("e{e:06}");
        let n_claims = rng.gen_range(spec.claims_min..=spec.claims_max);
        let mut claims = Vec::with_capacity(n_claims);
        for c in 0..n_claims {
            let base = spec.prob_low + (spec.prob_high - spec.prob_low) * rng.gen::<f64>();
            let mut p = base + prob_shift;
            if !(0.0..=1.0).contains(&p) {
                prob_clamps += 1;
                p = p.clamp(0.0, 1.0);
            }
            let label = rng.gen::<f64>() < p;
            let mut score = spec.distortion.apply(p) + score_shift;
            if !(0.0..=1.0).contains(&score) {
                score_clamps += 1;
                score = score.clamp(0.0, 1.0);
            }
            let gap = p - score;
            tallies[0].0 += 1;
            tallies[0].1 += gap;
            for &i in &active {
                tallies[i + 1].0 += 1;
                tallies[i + 1].1 += gap;
            }
            true_probabilities.push(p);
            claims.push(ClaimRecord {
                entity_id: entity_id.clone(),
                claim_id: format!("c{c}"),
                score,
                label,
                text: None,
            });
        }
        entities.push(EntityRecord {
            entity_id,
            claims,
            attributes,
        });
    }

    let mut warnings = Vec::new();
    if prob_clamps > 0 {
        warnings.push(format!(
            "{prob_clamps} true probabilities fell outside [0, 1] after offsets and were clamped"
        ));
    }
    if score_clamps > 0 {
        warnings.push(format!(
            "{score_clamps} scores fell outside [0, 1] after distortion and were clamped"
        ));
    }
    let names = std::iter::once("all".to_string()).chain(effect_groups.iter().map(|g| g.name.clone()));
    let truth = names
        .zip(&tallies)
        .map(|(group, &(n, sum))| GroupTruth {
            group,
            n_claims: n,
            bias: if n > 0 { sum / n as f64 } else { 0.0 },
        })
        .collect();

    Ok(SyntheticData {
        spec: spec.clone(),
        seed,
        entities,
        true_probabilities,
        truth,
        warnings,
    })
}
