//! Linear classification heads and their on-disk form.
//!
//! A head is stored as a manifest plus one or two CSPL tensors:
//!
//! ```toml
//! labels = ["a", "b", "s1", "s2"]
//! weights = "head.weights.cspl"
//! bias = "head.bias.cspl"        # optional
//!
//! [[provenance]]                 # edited heads only
//! id = "s1"
//! method = "retrieval"
//! source_entry = 3
//! source_text = "left to right"
//! ```

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::doc::{read_toml, sibling, stem, write_toml};
use crate::error::{Error, Result};
use crate::tensor::{argmax, dot, load_tensor, save_tensor, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    labels: Vec<String>,
    weights: Tensor,
    bias: Option<Vec<f32>>,
}

impl ClassifierHead {
    pub fn new(labels: Vec<String>, weights: Tensor, bias: Option<Vec<f32>>) -> Result<Self> {
        if weights.rank() != 2 {
            return Err(Error::Shape("head weights must be rank 2".into()));
        }
        if weights.rows() != labels.len() {
            return Err(Error::DimMismatch {
                expected: labels.len(),
                got: weights.rows(),
            });
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::DuplicateId(l.clone()));
            }
        }
        if let Some(b) = &bias {
            if b.len() != labels.len() {
                return Err(Error::DimMismatch {
                    expected: labels.len(),
                    got: b.len(),
                });
            }
            if let Some(i) = b.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(i));
            }
        }
        Ok(Self {
            labels,
            weights,
            bias,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> Option<&[f32]> {
        self.bias.as_deref()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    /// Feature dimension d.
    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.weights.row(i)
    }

    pub fn row_of(&self, label: &str) -> Result<&[f32]> {
        self.index_of(label)
            .map(|i| self.row(i))
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn bias_of(&self, i: usize) -> Option<f32> {
        self.bias.as_ref().map(|b| b[i])
    }

    pub fn logits(&self, x: &[f32]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self
            .weights
            .iter_rows()
            .enumerate()
            .map(|(i, w)| dot(w, x) + self.bias_of(i).map_or(0.0, f64::from))
            .collect())
    }

    /// Index of the top logit; ties go to the lowest index.
    pub fn predict_index(&self, x: &[f32]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?).expect("head has at least one row"))
    }

    pub fn predict(&self, x: &[f32]) -> Result<&str> {
        Ok(&self.labels[self.predict_index(x)?])
    }

    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        Ok(load_manifest(manifest.as_ref())?.0)
    }

    /// Loads a bare weight tensor whose rows follow `labels`.
    pub fn load_tensor_with_labels(
        weights: impl AsRef<Path>,
        bias: Option<&Path>,
        labels: Vec<String>,
    ) -> Result<Self> {
        let w = load_tensor(weights)?;
        let b = bias.map(load_tensor).transpose()?.map(Tensor::into_data);
        Self::new(labels, w, b)
    }

    pub fn save(&self, manifest: impl AsRef<Path>) -> Result<()> {
        save_manifest(self, &[], manifest.as_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditMethod {
    Retrieval,
    Joint,
    Alignment,
    CoarseCopy,
    Random,
}

impl EditMethod {
    pub const ALL: [EditMethod; 5] = [
        EditMethod::Retrieval,
        EditMethod::Joint,
        EditMethod::Alignment,
        EditMethod::CoarseCopy,
        EditMethod::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EditMethod::Retrieval => "retrieval",
            EditMethod::Joint => "joint",
            EditMethod::Alignment => "alignment",
            EditMethod::CoarseCopy => "coarse-copy",
            EditMethod::Random => "random",
        }
    }
}

impl fmt::Display for EditMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EditMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub id: String,
    pub method: EditMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_entry: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_text: Option<String>,
}

/// A head whose label space has had one coarse category replaced by subcategories.
#[derive(Debug, Clone, PartialEq)]
pub struct EditedHead {
    pub head: ClassifierHead,
    /// One record per new row, in subcategory order.
    pub provenance: Vec<Provenance>,
}

impl EditedHead {
    pub fn labels(&self) -> &[String] {
        self.head.labels()
    }

    /// Number of rows carried over from the original head.
    pub fn retained(&self) -> usize {
        self.head.num_labels() - self.provenance.len()
    }

    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let (head, provenance) = load_manifest(manifest.as_ref())?;
        Ok(Self { head, provenance })
    }

    pub fn save(&self, manifest: impl AsRef<Path>) -> Result<()> {
        save_manifest(&self.head, &self.provenance, manifest.as_ref())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadDoc {
    labels: Vec<String>,
    weights: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bias: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    provenance: Vec<Provenance>,
}

fn load_manifest(path: &Path) -> Result<(ClassifierHead, Vec<Provenance>)> {
    let doc: HeadDoc = read_toml(path)?;
    let weights = load_tensor(sibling(path, &doc.weights))?;
    let bias = doc
        .bias
        .as_deref()
        .map(|b| load_tensor(sibling(path, b)).map(Tensor::into_data))
        .transpose()?;
    Ok((ClassifierHead::new(doc.labels, weights, bias)?, doc.provenance))
}

fn save_manifest(head: &ClassifierHead, provenance: &[Provenance], path: &Path) -> Result<()> {
    let name = stem(path);
    let weights = format!("{name}.weights.cspl");
    save_tensor(&head.weights, sibling(path, &weights))?;
    let bias = match &head.bias {
        Some(b) => {
            let file = format!("{name}.bias.cspl");
            save_tensor(&Tensor::vector(b.clone())?, sibling(path, &file))?;
            Some(file)
        }
        None => None,
    };
    write_toml(
        path,
        &HeadDoc {
            labels: head.labels.clone(),
            weights,
            bias,
            provenance: provenance.to_vec(),
        },
    )
}
