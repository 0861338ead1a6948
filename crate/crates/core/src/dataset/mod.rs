//! Data model and JSONL ingestion.
//!
//! One line per entity (a single long-form generation):
//!
//! ```text
//! {"entity_id": "e1", "attributes": {"sex": "female"},
//!  "claims": [{"claim_id": "c1", "score": 0.8, "label": 1, "text": "..."}]}
//! ```

mod groups;
mod split;
mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use groups::{derive_groups, GroupAtlas, GroupDef};
pub use split::{make_splits, SplitPlan};
pub use synthetic::{
    generate_synthetic, AttributeSpec, GroupEffect, GroupTruth, ScoreDistortion, SyntheticData,
    SyntheticSpec,
};

/// Categorical attributes of an entity, keyed by attribute name.
pub type Attributes = BTreeMap<String, String>;

/// One atomic claim with its base confidence score and correctness label.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaimRecord {
    pub entity_id: String,
    pub claim_id: String,
    pub score: f64,
    pub label: bool,
    pub text: Option<String>,
}

/// One long-form generation: its claims plus the attributes groups are
/// derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityRecord {
    pub entity_id: String,
    pub claims: Vec<ClaimRecord>,
    pub attributes: Attributes,
}

impl EntityRecord {
    /// Entities without claims are kept in splits but have nothing to
    /// calibrate or threshold.
    pub fn is_degenerate(&self) -> bool {
        self.claims.is_empty()
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.claims.iter().map(|c| c.score)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityLine {
    entity_id: String,
    #[serde(default)]
    attributes: Attributes,
    #[serde(default)]
    claims: Vec<ClaimLine>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClaimLine {
    claim_id: String,
    score: f64,
    label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

impl EntityLine {
    fn into_record(self) -> std::result::Result<EntityRecord, String> {
        let mut seen = HashSet::new();
        let mut claims = Vec::with_capacity(self.claims.len());
        for c in self.claims {
            if !seen.insert(c.claim_id.clone()) {
                return Err(format!(
                    "duplicate claim_id `{}` in entity `{}`",
                    c.claim_id, self.entity_id
                ));
            }
            if !(0.0..=1.0).contains(&c.score) {
                return Err(format!(
                    "claim `{}` of entity `{}` has score {} outside [0, 1]",
                    c.claim_id, self.entity_id, c.score
                ));
            }
            let label = match c.label {
                0 => false,
                1 => true,
                other => {
                    return Err(format!(
                        "claim `{}` of entity `{}` has label {other}, expected 0 or 1",
                        c.claim_id, self.entity_id
                    ))
                }
            };
            claims.push(ClaimRecord {
                entity_id: self.entity_id.clone(),
                claim_id: c.claim_id,
                score: c.score,
                label,
                text: c.text,
            });
        }
        Ok(EntityRecord {
            entity_id: self.entity_id,
            claims,
            attributes: self.attributes,
        })
    }

    fn from_record(entity: &EntityRecord) -> Self {
        EntityLine {
            entity_id: entity.entity_id.clone(),
            attributes: entity.attributes.clone(),
            claims: entity
                .claims
                .iter()
                .map(|c| ClaimLine {
                    claim_id: c.claim_id.clone(),
                    score: c.score,
                    label: u8::from(c.label),
                    text: c.text.clone(),
                })
                .collect(),
        }
    }
}

/// Reads entities from a JSONL file, preserving line order. Blank lines are
/// skipped.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<EntityRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut entities = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: EntityLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let entity = parsed
            .into_record()
            .map_err(|msg| Error::Validation(format!("line {line_no}: {msg}")))?;
        if !ids.insert(entity.entity_id.clone()) {
            return Err(Error::Validation(format!(
                "line {line_no}: duplicate entity_id `{}`",
                entity.entity_id
            )));
        }
        entities.push(entity);
    }
    Ok(entities)
}

/// Writes entities as JSONL, one entity per line.
pub fn save_dataset(path: impl AsRef<Path>, entities: &[EntityRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for entity in entities {
        serde_json::to_writer(&mut out, &EntityLine::from_record(entity))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
