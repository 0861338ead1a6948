use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Attributes, EntityRecord};
use crate::error::{Error, Result};

/// A named group: the conjunction of `attribute = value` conditions.
///
/// An entity missing one of the attributes is not a member. The group with no
/// conditions contains everything.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupDef {
    pub name: String,
    pub conditions: Vec<(String, String)>,
}

impl GroupDef {
    pub fn new(conditions: Vec<(String, String)>) -> Self {
        let mut conditions = conditions;
        conditions.sort();
        let name = if conditions.is_empty() {
            "all".to_string()
        } else {
            conditions
                .iter()
                .map(|(a, v)| format!("{a}={v}"))
                .collect::<Vec<_>>()
                .join("&")
        };
        GroupDef { name, conditions }
    }

    /// The trivial group containing every entity.
    pub fn everything() -> Self {
        GroupDef::new(Vec::new())
    }

    pub fn arity(&self) -> usize {
        self.conditions.len()
    }

    pub fn contains(&self, attributes: &Attributes) -> bool {
        self.conditions
            .iter()
            .all(|(attr, value)| attributes.get(attr) == Some(value))
    }
}

/// The family of groups derived from entity attributes.
///
/// The atlas records every group; the size floor `min_frac` is applied as a
/// view against a particular test split (see [`GroupAtlas::retained`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAtlas {
    pub groups: Vec<GroupDef>,
    pub min_frac: f64,
}

impl GroupAtlas {
    pub fn new(groups: Vec<GroupDef>, min_frac: f64) -> Self {
        GroupAtlas { groups, min_frac }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.groups.iter().map(|g| g.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&GroupDef> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Membership bits of one attribute map, in atlas order.
    pub fn membership(&self, attributes: &Attributes) -> Vec<bool> {
        self.groups.iter().map(|g| g.contains(attributes)).collect()
    }

    /// Sub-atlas restricted to groups of at most `max_arity` conditions.
    pub fn with_max_arity(&self, max_arity: usize) -> GroupAtlas {
        GroupAtlas {
            groups: self
                .groups
                .iter()
                .filter(|g| g.arity() <= max_arity)
                .cloned()
                .collect(),
            min_frac: self.min_frac,
        }
    }

    /// Indices of groups whose share of `test` entities is at least the floor.
    /// Groups with no test members are never retained.
    pub fn retained(&self, test: &[&EntityRecord]) -> Vec<usize> {
        if test.is_empty() {
            return Vec::new();
        }
        let n = test.len() as f64;
        self.groups
            .iter()
            .enumerate()
            .filter_map(|(idx, g)| {
                let count = test.iter().filter(|e| g.contains(&e.attributes)).count();
                (count > 0 && count as f64 / n >= self.min_frac).then_some(idx)
            })
            .collect()
    }

    /// Sub-atlas holding only the groups at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> GroupAtlas {
        GroupAtlas {
            groups: indices.iter().map(|&i| self.groups[i].clone()).collect(),
            min_frac: self.min_frac,
        }
    }
}

/// Builds one group per observed `attribute=value` pair and, when
/// `max_arity == 2`, one per pair of such conditions on distinct attributes.
///
/// Pairs are formed from the observed values of each attribute, whether or
/// not the combination co-occurs in the data; empty groups are later removed
/// by the size floor. Groups are ordered by arity, then name.
pub fn derive_groups(
    entities: &[EntityRecord],
    max_arity: usize,
    min_frac: f64,
) -> Result<GroupAtlas> {
    if !(1..=2).contains(&max_arity) {
        return Err(Error::InvalidArgument(format!(
            "max_arity must be 1 or 2, got {max_arity}"
        )));
    }
    if !(0.0..1.0).contains(&min_frac) {
        return Err(Error::InvalidArgument(format!(
            "min_frac must lie in [0, 1), got {min_frac}"
        )));
    }
    let mut values: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for entity in entities {
        for (attr, value) in &entity.attributes {
            values.entry(attr).or_default().insert(value);
        }
    }
    let singles: Vec<(String, String)> = values
        .iter()
        .flat_map(|(attr, vals)| vals.iter().map(move |v| (attr.to_string(), v.to_string())))
        .collect();

    let mut groups: Vec<GroupDef> = singles
        .iter()
        .map(|c| GroupDef::new(vec![c.clone()]))
        .collect();
    if max_arity == 2 {
        for (i, first) in singles.iter().enumerate() {
            for second in &singles[i + 1..] {
                if first.0 != second.0 {
                    groups.push(GroupDef::new(vec![first.clone(), second.clone()]));
                }
            }
        }
    }
    groups.sort_by(|a, b| a.arity().cmp(&b.arity()).then_with(|| a.name.cmp(&b.name)));
    Ok(GroupAtlas::new(groups, min_frac))
}
