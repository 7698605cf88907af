//! Pooled feature vectors with string labels.
//!
//! ```toml
//! role = "train"                 # "train" | "eval"
//! labels = ["a", "a", "s1"]      # one per tensor row
//! tensor = "train.cspl"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::doc::{read_toml, sibling, stem, write_toml};
use crate::error::{Error, Result};
use crate::tensor::{load_tensor, save_tensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    features: Tensor,
    labels: Vec<String>,
    pub role: Role,
}

impl FeatureDataset {
    pub fn new(features: Tensor, labels: Vec<String>, role: Role) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::Shape("features must be rank 2".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::DimMismatch {
                expected: features.rows(),
                got: labels.len(),
            });
        }
        Ok(Self {
            features,
            labels,
            role,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn sample(&self, i: usize) -> (&[f32], &str) {
        (self.features.row(i), &self.labels[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f32], &str)> {
        self.features
            .iter_rows()
            .zip(self.labels.iter().map(String::as_str))
    }

    /// Keeps the samples whose label satisfies `keep`, preserving order.
    pub fn filter(&self, keep: impl Fn(&str) -> bool) -> Result<Self> {
        let (rows, labels): (Vec<&[f32]>, Vec<String>) = self
            .iter()
            .filter(|(_, l)| keep(l))
            .map(|(x, l)| (x, l.to_string()))
            .unzip();
        if rows.is_empty() {
            return Err(Error::Empty("filtered dataset"));
        }
        Self::new(Tensor::from_rows(&rows)?, labels, self.role)
    }

    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let doc: DatasetDoc = read_toml(manifest)?;
        let features = load_tensor(sibling(manifest, &doc.tensor))?;
        Self::new(features, doc.labels, doc.role)
    }

    pub fn save(&self, manifest: impl AsRef<Path>) -> Result<()> {
        let manifest = manifest.as_ref();
        let tensor = format!("{}.cspl", stem(manifest));
        save_tensor(&self.features, sibling(manifest, &tensor))?;
        write_toml(
            manifest,
            &DatasetDoc {
                role: self.role,
                labels: self.labels.clone(),
                tensor,
            },
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetDoc {
    role: Role,
    labels: Vec<String>,
    tensor: String,
}
