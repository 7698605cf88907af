//! Modifier vectors mined from a trained head.
//!
//! Each pseudo-coarse group's vector is the mean of its members' weight rows;
//! a member's modifier vector is its row minus that mean. Biases, when the
//! head has them, go through the same arithmetic.
//!
//! On disk a dictionary is a directory holding `vectors.cspl` (entry vectors
//! stacked in entry order), `coarse.cspl` (group vectors in group order) and
//! `dictionary.toml` with the texts, group names and bias terms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::doc::{ensure_dir, read_toml, write_toml};
use crate::error::{Error, Result};
use crate::head::ClassifierHead;
use crate::taxonomy::{PseudoCoarseGroup, Taxonomy};
use crate::tensor::{load_tensor, save_tensor, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModifierEntry {
    pub modifier_text: String,
    pub full_text: String,
    /// Category whose row produced this entry.
    pub category_id: String,
    pub source_group: String,
    #[serde(skip)]
    pub vector: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_delta: Option<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseVector {
    pub group: String,
    pub base_text: String,
    #[serde(skip)]
    pub vector: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModifierDictionary {
    /// Ordered by group declaration order, then member declaration order.
    pub entries: Vec<ModifierEntry>,
    pub coarse_vectors: Vec<CoarseVector>,
    pub dim: usize,
}

/// Mean of the group's member rows (and biases, when present).
pub fn pseudo_coarse_vector(
    head: &ClassifierHead,
    group: &PseudoCoarseGroup,
) -> Result<(Vec<f32>, Option<f32>)> {
    let d = head.dim();
    let mut sum = vec![0.0f64; d];
    let mut bias_sum = 0.0f64;
    for member in &group.members {
        let i = head
            .index_of(member)
            .ok_or_else(|| Error::UnknownMember(member.clone()))?;
        for (s, &w) in sum.iter_mut().zip(head.row(i)) {
            *s += w as f64;
        }
        bias_sum += head.bias_of(i).unwrap_or(0.0) as f64;
    }
    let n = group.members.len() as f64;
    let mean = sum.into_iter().map(|s| (s / n) as f32).collect();
    let bias = head.bias().map(|_| (bias_sum / n) as f32);
    Ok((mean, bias))
}

pub fn build_dictionary(head: &ClassifierHead, tax: &Taxonomy) -> Result<ModifierDictionary> {
    let mut entries = Vec::new();
    let mut coarse_vectors = Vec::with_capacity(tax.groups.len());
    for group in &tax.groups {
        let (mean, mean_bias) = pseudo_coarse_vector(head, group)?;
        for member in &group.members {
            let i = head.index_of(member).expect("checked by pseudo_coarse_vector");
            let vector = head
                .row(i)
                .iter()
                .zip(&mean)
                .map(|(&w, &m)| w - m)
                .collect();
            let category = tax
                .category(member)
                .ok_or_else(|| Error::UnknownMember(member.clone()))?;
            entries.push(ModifierEntry {
                modifier_text: tax.modifier_text(member)?,
                full_text: category.text.clone(),
                category_id: member.clone(),
                source_group: group.name.clone(),
                vector,
                bias_delta: mean_bias.and_then(|mb| head.bias_of(i).map(|b| b - mb)),
            });
        }
        coarse_vectors.push(CoarseVector {
            group: group.name.clone(),
            base_text: group.base_text.clone(),
            vector: mean,
            bias: mean_bias,
        });
    }
    Ok(ModifierDictionary {
        entries,
        coarse_vectors,
        dim: head.dim(),
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DictionaryDoc {
    dim: usize,
    #[serde(rename = "entry", default)]
    entries: Vec<ModifierEntry>,
    #[serde(rename = "group", default)]
    groups: Vec<CoarseVector>,
}

impl ModifierDictionary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn coarse_vector(&self, group: &str) -> Option<&CoarseVector> {
        self.coarse_vectors.iter().find(|c| c.group == group)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        ensure_dir(dir)?;
        if !self.entries.is_empty() {
            let rows: Vec<&[f32]> = self.entries.iter().map(|e| e.vector.as_slice()).collect();
            save_tensor(&Tensor::from_rows(&rows)?, dir.join("vectors.cspl"))?;
            let rows: Vec<&[f32]> = self
                .coarse_vectors
                .iter()
                .map(|c| c.vector.as_slice())
                .collect();
            save_tensor(&Tensor::from_rows(&rows)?, dir.join("coarse.cspl"))?;
        }
        write_toml(
            &dir.join("dictionary.toml"),
            &DictionaryDoc {
                dim: self.dim,
                entries: self.entries.clone(),
                groups: self.coarse_vectors.clone(),
            },
        )
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let doc: DictionaryDoc = read_toml(&dir.join("dictionary.toml"))?;
        let mut entries = doc.entries;
        let mut coarse_vectors = doc.groups;
        if !entries.is_empty() {
            attach_rows(&mut entries, &load_tensor(dir.join("vectors.cspl"))?, doc.dim, |e, v| {
                e.vector = v
            })?;
            attach_rows(
                &mut coarse_vectors,
                &load_tensor(dir.join("coarse.cspl"))?,
                doc.dim,
                |c, v| c.vector = v,
            )?;
        }
        Ok(Self {
            entries,
            coarse_vectors,
            dim: doc.dim,
        })
    }
}

fn attach_rows<T>(
    items: &mut [T],
    rows: &Tensor,
    dim: usize,
    set: impl Fn(&mut T, Vec<f32>),
) -> Result<()> {
    if rows.rank() != 2 || rows.rows() != items.len() {
        return Err(Error::DimMismatch {
            expected: items.len(),
            got: rows.rows(),
        });
    }
    if rows.cols() != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            got: rows.cols(),
        });
    }
    for (item, row) in items.iter_mut().zip(rows.iter_rows()) {
        set(item, row.to_vec());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::{Category, Granularity};

    fn fine(id: &str, text: &str, group: &str) -> Category {
        Category {
            id: id.into(),
            text: text.into(),
            granularity: Granularity::Fine,
            group: Some(group.into()),
            tags: vec![],
            modifier_text: None,
        }
    }

    fn setup(rows: &[[f32; 2]]) -> (ClassifierHead, Taxonomy) {
        let cats: Vec<Category> = (0..rows.len())
            .map(|i| fine(&format!("y{i}"), &format!("push mod{i}"), "push"))
            .collect();
        let labels = cats.iter().map(|c| c.id.clone()).collect();
        let tax = Taxonomy::build(cats, &[], vec![], vec![]).unwrap();
        let w = Tensor::from_rows(rows).unwrap();
        (ClassifierHead::new(labels, w, None).unwrap(), tax)
    }

    #[test]
    fn pseudo_coarse_mean() {
        let (head, tax) = setup(&[[2.0, 0.0], [0.0, 2.0]]);
        assert_eq!(pseudo_coarse_vector(&head, &tax.groups[0]).unwrap().0, vec![1.0, 1.0]);
        let (head, tax) = setup(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]);
        assert_eq!(pseudo_coarse_vector(&head, &tax.groups[0]).unwrap().0, vec![1.0, 1.0]);
    }

    #[test]
    fn unknown_member() {
        let (head, _) = setup(&[[2.0, 0.0], [0.0, 2.0]]);
        let g = PseudoCoarseGroup {
            name: "g".into(),
            base_text: "push".into(),
            members: vec!["y0".into(), "x".into()],
        };
        let err = pseudo_coarse_vector(&head, &g).unwrap_err();
        assert!(err.to_string().contains("unknown member"));
    }

    #[test]
    fn two_member_entries() {
        let (head, tax) = setup(&[[2.0, 0.0], [0.0, 2.0]]);
        let dict = build_dictionary(&head, &tax).unwrap();
        assert_eq!(dict.entries[0].vector, vec![1.0, -1.0]);
        assert_eq!(dict.entries[1].vector, vec![-1.0, 1.0]);
        assert_eq!(dict.entries[0].modifier_text, "mod0");
        assert_eq!(dict.entries[0].full_text, "push mod0");
    }

    #[test]
    fn three_member_entries() {
        // Hand computation: mean of (3,0),(0,3),(0,0) is (1,1).
        let (head, tax) = setup(&[[3.0, 0.0], [0.0, 3.0], [0.0, 0.0]]);
        let dict = build_dictionary(&head, &tax).unwrap();
        assert_eq!(dict.coarse_vectors[0].vector, vec![1.0, 1.0]);
        let vecs: Vec<Vec<f32>> = dict.entries.iter().map(|e| e.vector.clone()).collect();
        assert_eq!(vecs, vec![vec![2.0, -1.0], vec![-1.0, 2.0], vec![-1.0, -1.0]]);
    }

    #[test]
    fn bias_deltas_follow_weights() {
        let (head, tax) = setup(&[[2.0, 0.0], [0.0, 2.0]]);
        let head = ClassifierHead::new(
            head.labels().to_vec(),
            head.weights().clone(),
            Some(vec![1.0, 3.0]),
        )
        .unwrap();
        let dict = build_dictionary(&head, &tax).unwrap();
        assert_eq!(dict.coarse_vectors[0].bias, Some(2.0));
        assert_eq!(dict.entries[0].bias_delta, Some(-1.0));
        assert_eq!(dict.entries[1].bias_delta, Some(1.0));
    }

    #[test]
    fn save_load_roundtrip() {
        let (head, tax) = setup(&[[3.0, 0.0], [0.0, 3.0], [0.0, 0.0]]);
        let dict = build_dictionary(&head, &tax).unwrap();
        let dir = tempfile::tempdir().unwrap();
        dict.save(dir.path()).unwrap();
        assert_eq!(ModifierDictionary::load(dir.path()).unwrap(), dict);
    }
}
