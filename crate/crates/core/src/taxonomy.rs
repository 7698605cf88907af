//! Label space, pseudo-coarse groupings and split specifications.
//!
//! Taxonomies are TOML documents:
//!
//! ```toml
//! # Category ids in tensor row order (defaults to declaration order).
//! row_order = ["push_lr", "push_rl", "poke"]
//!
//! [[category]]
//! id = "push_lr"
//! text = "Pushing something from left to right"
//! granularity = "fine"          # "fine" | "coarse"
//! group = "pushing"             # optional, fine categories only
//! tags = ["direction"]          # optional
//! modifier_text = "left to right"   # optional override
//!
//! [[group]]                     # optional, overrides the derived base text
//! name = "pushing"
//! base_text = "pushing something"
//!
//! [[split]]
//! coarse_id = "poke"
//! tags = ["outcome"]            # optional
//! [[split.subcategory]]
//! id = "poke_spin"
//! full_text = "poking so it spins"
//! modifier_text = "spins"       # optional, derived from the coarse text otherwise
//! ```

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Coarse,
    Fine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Category {
    pub id: String,
    pub text: String,
    pub granularity: Granularity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modifier_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoCoarseGroup {
    pub name: String,
    pub base_text: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subcategory {
    pub id: String,
    pub full_text: String,
    #[serde(default)]
    pub modifier_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub coarse_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(rename = "subcategory")]
    pub subcategories: Vec<Subcategory>,
}

impl SplitSpec {
    pub fn k(&self) -> usize {
        self.subcategories.len()
    }

    pub fn subcategory_ids(&self) -> impl Iterator<Item = &str> {
        self.subcategories.iter().map(|s| s.id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    pub categories: Vec<Category>,
    pub groups: Vec<PseudoCoarseGroup>,
    pub splits: Vec<SplitSpec>,
    /// Category ids in tensor row order.
    pub row_order: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupDoc {
    name: String,
    base_text: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaxonomyDoc {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    row_order: Vec<String>,
    #[serde(default, rename = "category")]
    categories: Vec<Category>,
    #[serde(default, rename = "group", skip_serializing_if = "Vec::is_empty")]
    groups: Vec<GroupDoc>,
    #[serde(default, rename = "split", skip_serializing_if = "Vec::is_empty")]
    splits: Vec<SplitSpec>,
}

fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Removes the tokens of `base_text` from `fine_text`.
///
/// Both texts are lowercased and split on whitespace. Each base token cancels
/// one occurrence (the leftmost remaining) in the fine text; the rest keeps
/// its order.
pub fn derive_modifier_text(fine_text: &str, base_text: &str) -> Result<String> {
    let mut remaining = tokens(fine_text);
    for tok in tokens(base_text) {
        if let Some(pos) = remaining.iter().position(|t| *t == tok) {
            remaining.remove(pos);
        }
    }
    if remaining.is_empty() {
        return Err(Error::EmptyModifier {
            fine: fine_text.to_string(),
            base: base_text.to_string(),
        });
    }
    Ok(remaining.join(" "))
}

/// Longest common token prefix of all member texts, lowercased.
pub fn derive_base_text<S: AsRef<str>>(member_texts: &[S]) -> Result<String> {
    let all: Vec<Vec<String>> = member_texts.iter().map(|t| tokens(t.as_ref())).collect();
    let owned = || member_texts.iter().map(|t| t.as_ref().to_string()).collect();
    if all.len() < 2 {
        return Err(Error::NoSharedBase(owned()));
    }
    let first = &all[0];
    let len = all[1..]
        .iter()
        .map(|t| first.iter().zip(t).take_while(|(a, b)| a == b).count())
        .min()
        .unwrap_or(0);
    if len == 0 {
        return Err(Error::NoSharedBase(owned()));
    }
    Ok(first[..len].join(" "))
}

impl Taxonomy {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Document { message, .. } => Error::Document {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: TaxonomyDoc = toml::from_str(text).map_err(|e| Error::Document {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        Self::from_doc(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    pub fn to_toml_string(&self) -> String {
        let doc = TaxonomyDoc {
            row_order: self.row_order.clone(),
            categories: self.categories.clone(),
            groups: self
                .groups
                .iter()
                .map(|g| GroupDoc {
                    name: g.name.clone(),
                    base_text: g.base_text.clone(),
                })
                .collect(),
            splits: self.splits.clone(),
        };
        toml::to_string(&doc).expect("taxonomy serializes")
    }

    /// Builds and validates a taxonomy from categories, base-text overrides and splits.
    pub fn build(
        categories: Vec<Category>,
        base_text_overrides: &[(String, String)],
        splits: Vec<SplitSpec>,
        row_order: Vec<String>,
    ) -> Result<Self> {
        Self::from_doc(TaxonomyDoc {
            row_order,
            categories,
            groups: base_text_overrides
                .iter()
                .map(|(name, base_text)| GroupDoc {
                    name: name.clone(),
                    base_text: base_text.clone(),
                })
                .collect(),
            splits,
        })
    }

    fn from_doc(doc: TaxonomyDoc) -> Result<Self> {
        let TaxonomyDoc {
            row_order,
            categories,
            groups: group_docs,
            mut splits,
        } = doc;

        let mut seen = HashSet::new();
        for c in &categories {
            if c.id.is_empty() {
                return Err(Error::Taxonomy("empty category id".into()));
            }
            if !seen.insert(c.id.as_str()) {
                return Err(Error::DuplicateId(c.id.clone()));
            }
            if c.text.trim().is_empty() {
                return Err(Error::Taxonomy(format!("category {:?} has empty text", c.id)));
            }
            if c.group.is_some() && c.granularity == Granularity::Coarse {
                return Err(Error::Taxonomy(format!(
                    "coarse category {:?} inside group {:?}",
                    c.id,
                    c.group.as_deref().unwrap()
                )));
            }
        }

        let row_order = if row_order.is_empty() {
            categories.iter().map(|c| c.id.clone()).collect()
        } else {
            let listed: HashSet<&str> = row_order.iter().map(String::as_str).collect();
            if listed.len() != row_order.len() || listed != seen {
                return Err(Error::Taxonomy(
                    "row_order must list every category id exactly once".into(),
                ));
            }
            row_order
        };

        let mut overrides: HashMap<&str, &str> = HashMap::new();
        for g in &group_docs {
            if overrides
                .insert(g.name.as_str(), g.base_text.as_str())
                .is_some()
            {
                return Err(Error::DuplicateId(g.name.clone()));
            }
        }

        let mut groups: Vec<PseudoCoarseGroup> = Vec::new();
        for c in &categories {
            let Some(name) = &c.group else { continue };
            match groups.iter_mut().find(|g| &g.name == name) {
                Some(g) => g.members.push(c.id.clone()),
                None => groups.push(PseudoCoarseGroup {
                    name: name.clone(),
                    base_text: String::new(),
                    members: vec![c.id.clone()],
                }),
            }
        }
        for name in overrides.keys() {
            if !groups.iter().any(|g| g.name == *name) {
                return Err(Error::Taxonomy(format!("group {name:?} has no members")));
            }
        }
        let by_id: HashMap<&str, &Category> =
            categories.iter().map(|c| (c.id.as_str(), c)).collect();
        for g in &mut groups {
            if g.members.len() < 2 {
                return Err(Error::SingletonGroup(g.name.clone()));
            }
            g.base_text = match overrides.get(g.name.as_str()) {
                Some(text) => text.to_string(),
                None => {
                    let texts: Vec<&str> =
                        g.members.iter().map(|m| by_id[m.as_str()].text.as_str()).collect();
                    derive_base_text(&texts)?
                }
            };
            for m in &g.members {
                let c = by_id[m.as_str()];
                if c.modifier_text.is_none() {
                    derive_modifier_text(&c.text, &g.base_text)?;
                }
            }
        }

        for split in &mut splits {
            let coarse = by_id
                .get(split.coarse_id.as_str())
                .ok_or_else(|| Error::UnknownLabel(split.coarse_id.clone()))?;
            if coarse.granularity != Granularity::Coarse {
                return Err(Error::Taxonomy(format!(
                    "split target {:?} is not coarse-grained",
                    split.coarse_id
                )));
            }
            if split.subcategories.len() < 2 {
                return Err(Error::Taxonomy(format!(
                    "split of {:?} needs at least 2 subcategories",
                    split.coarse_id
                )));
            }
            let mut sub_ids = HashSet::new();
            for s in &mut split.subcategories {
                if seen.contains(s.id.as_str()) {
                    return Err(Error::SplitCollision(s.id.clone()));
                }
                if !sub_ids.insert(s.id.clone()) {
                    return Err(Error::DuplicateId(s.id.clone()));
                }
                if s.full_text.trim().is_empty() {
                    return Err(Error::Taxonomy(format!(
                        "subcategory {:?} has empty text",
                        s.id
                    )));
                }
                if s.modifier_text.trim().is_empty() {
                    s.modifier_text = derive_modifier_text(&s.full_text, &coarse.text)?;
                }
            }
        }
        let mut split_targets = HashSet::new();
        for s in &splits {
            if !split_targets.insert(s.coarse_id.as_str()) {
                return Err(Error::DuplicateId(s.coarse_id.clone()));
            }
        }

        Ok(Self {
            categories,
            groups,
            splits,
            row_order,
        })
    }

    pub fn category(&self, id: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn split(&self, coarse_id: &str) -> Option<&SplitSpec> {
        self.splits.iter().find(|s| s.coarse_id == coarse_id)
    }

    pub fn group(&self, name: &str) -> Option<&PseudoCoarseGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Modifier text of a grouped category: explicit override or derived from the group base.
    pub fn modifier_text(&self, category_id: &str) -> Result<String> {
        let c = self
            .category(category_id)
            .ok_or_else(|| Error::UnknownLabel(category_id.to_string()))?;
        if let Some(text) = &c.modifier_text {
            return Ok(text.clone());
        }
        let group = c
            .group
            .as_deref()
            .and_then(|g| self.group(g))
            .ok_or_else(|| Error::Taxonomy(format!("category {category_id:?} is ungrouped")))?;
        derive_modifier_text(&c.text, &group.base_text)
    }

    /// Label space after splitting: retained ids in row order, then the subcategories.
    pub fn split_label_space(&self, split: &SplitSpec) -> Vec<String> {
        self.row_order
            .iter()
            .filter(|id| **id != split.coarse_id)
            .cloned()
            .chain(split.subcategories.iter().map(|s| s.id.clone()))
            .collect()
    }

    /// Tags used for grouped reporting of a split: the split's own plus its target's.
    pub fn split_tags(&self, split: &SplitSpec) -> Vec<String> {
        let mut tags = split.tags.clone();
        if let Some(c) = self.category(&split.coarse_id) {
            for t in &c.tags {
                if !tags.contains(t) {
                    tags.push(t.clone());
                }
            }
        }
        tags
    }
}
