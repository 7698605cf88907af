//! Precomputed text-embedding tables keyed by exact strings.
//!
//! On disk: a manifest listing keys in row order plus a CSPL matrix.
//!
//! ```toml
//! keys = ["left to right", "pushing something"]
//! tensor = "emb.cspl"
//! ```

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::doc::{read_toml, sibling, stem, write_toml};
use crate::error::{Error, Result};
use crate::tensor::{load_tensor, norm, save_tensor, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingTable {
    keys: Vec<String>,
    index: HashMap<String, usize>,
    rows: Tensor,
}

impl TextEmbeddingTable {
    pub fn new(keys: Vec<String>, rows: Tensor) -> Result<Self> {
        if rows.rank() != 2 || rows.rows() != keys.len() {
            return Err(Error::DimMismatch {
                expected: keys.len(),
                got: rows.rows(),
            });
        }
        let mut index = HashMap::with_capacity(keys.len());
        for (i, k) in keys.iter().enumerate() {
            if index.insert(k.clone(), i).is_some() {
                return Err(Error::DuplicateId(k.clone()));
            }
            if norm(rows.row(i)) == 0.0 {
                return Err(Error::ZeroNorm);
            }
        }
        Ok(Self { keys, index, rows })
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Result<&[f32]> {
        self.index
            .get(key)
            .map(|&i| self.rows.row(i))
            .ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    pub fn rows(&self) -> &Tensor {
        &self.rows
    }

    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest = manifest.as_ref();
        let doc: EmbeddingDoc = read_toml(manifest)?;
        let rows = load_tensor(sibling(manifest, &doc.tensor))?;
        Self::new(doc.keys, rows)
    }

    pub fn save(&self, manifest: impl AsRef<Path>) -> Result<()> {
        let manifest = manifest.as_ref();
        let tensor = format!("{}.cspl", stem(manifest));
        save_tensor(&self.rows, sibling(manifest, &tensor))?;
        write_toml(
            manifest,
            &EmbeddingDoc {
                keys: self.keys.clone(),
                tensor,
            },
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingDoc {
    keys: Vec<String>,
    tensor: String,
}
