//! Generality, locality and their aggregation across splits.
//!
//! Generality is the edited head's accuracy on samples of the new
//! subcategories, predicted over the whole edited label space. Locality is
//! the ratio of edited to original correct counts on samples of every other
//! original category; it can exceed 1.
//!
//! Reports are written as TOML with metrics multiplied by 100:
//!
//! ```toml
//! [macro]
//! gen = 93.5
//! loc = 99.5
//! mean = 96.5
//! splits = 1
//!
//! [[split]]
//! split = "b0"
//! method = "retrieval"
//! seed = 7
//! gen = 93.5
//! loc = 99.5
//! mean = 96.5
//! M = 200
//! N = 600
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureDataset;
use crate::doc::{read_toml, write_toml};
use crate::error::{Error, Result};
use crate::head::ClassifierHead;
use crate::taxonomy::{SplitSpec, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Count {
    pub correct: usize,
    pub total: usize,
}

/// Generality from predictions: samples labelled with a subcategory of `split`.
pub fn generality_from_predictions<S: AsRef<str>>(
    predictions: &[S],
    truth: &[S],
    split: &SplitSpec,
) -> Result<Count> {
    if predictions.len() != truth.len() {
        return Err(Error::DimMismatch {
            expected: truth.len(),
            got: predictions.len(),
        });
    }
    let mut count = Count {
        correct: 0,
        total: 0,
    };
    for (p, t) in predictions.iter().zip(truth) {
        let t = t.as_ref();
        if split.subcategory_ids().any(|s| s == t) {
            count.total += 1;
            count.correct += usize::from(p.as_ref() == t);
        }
    }
    if count.total == 0 {
        return Err(Error::Empty("generality set"));
    }
    Ok(count)
}

/// Locality from predictions: samples labelled with an original category other
/// than the split target. Returns (edited count, original count).
pub fn locality_from_predictions<S: AsRef<str>>(
    original: &[S],
    edited: &[S],
    truth: &[S],
    original_labels: &[String],
    split: &SplitSpec,
) -> Result<(Count, Count)> {
    if original.len() != truth.len() || edited.len() != truth.len() {
        return Err(Error::DimMismatch {
            expected: truth.len(),
            got: original.len().min(edited.len()),
        });
    }
    let mut orig = Count {
        correct: 0,
        total: 0,
    };
    let mut edit = orig;
    for ((o, e), t) in original.iter().zip(edited).zip(truth) {
        let t = t.as_ref();
        if t == split.coarse_id || !original_labels.iter().any(|l| l == t) {
            continue;
        }
        orig.total += 1;
        edit.total += 1;
        orig.correct += usize::from(o.as_ref() == t);
        edit.correct += usize::from(e.as_ref() == t);
    }
    if orig.correct == 0 {
        return Err(Error::LocalityUndefined);
    }
    Ok((edit, orig))
}

fn predictions(head: &ClassifierHead, data: &FeatureDataset) -> Result<Vec<String>> {
    data.iter()
        .map(|(x, _)| head.predict(x).map(str::to_string))
        .collect()
}

/// Fraction of subcategory samples the edited head labels correctly.
pub fn generality(edited: &ClassifierHead, split: &SplitSpec, data: &FeatureDataset) -> Result<(f64, usize)> {
    let preds = predictions(edited, data)?;
    let c = generality_from_predictions(&preds, data.labels(), split)?;
    Ok((c.correct as f64 / c.total as f64, c.total))
}

/// Edited over original correct count on the untouched categories.
pub fn locality(
    original: &ClassifierHead,
    edited: &ClassifierHead,
    split: &SplitSpec,
    data: &FeatureDataset,
) -> Result<(f64, usize)> {
    let orig = predictions(original, data)?;
    let edit = predictions(edited, data)?;
    let (e, o) = locality_from_predictions(&orig, &edit, data.labels(), original.labels(), split)?;
    Ok((e.correct as f64 / o.correct as f64, o.total))
}

/// Metrics of one split, as fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitMetrics {
    pub split: String,
    pub method: String,
    pub seed: u64,
    pub generality: f64,
    pub locality: f64,
    pub mean: f64,
    pub m: usize,
    pub n: usize,
}

impl SplitMetrics {
    pub fn new(
        split: &str,
        method: &str,
        seed: u64,
        (generality, m): (f64, usize),
        (locality, n): (f64, usize),
    ) -> Self {
        Self {
            split: split.to_string(),
            method: method.to_string(),
            seed,
            generality,
            locality,
            mean: (generality + locality) / 2.0,
            m,
            n,
        }
    }
}

/// Scores one split of `original` edited into `edited`.
pub fn evaluate_split(
    original: &ClassifierHead,
    edited: &ClassifierHead,
    split: &SplitSpec,
    data: &FeatureDataset,
    method: &str,
    seed: u64,
) -> Result<SplitMetrics> {
    Ok(SplitMetrics::new(
        &split.coarse_id,
        method,
        seed,
        generality(edited, split, data)?,
        locality(original, edited, split, data)?,
    ))
}

/// Metric triple scaled by 100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    #[serde(rename = "gen")]
    pub generality: f64,
    #[serde(rename = "loc")]
    pub locality: f64,
    pub mean: f64,
    pub splits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub split: String,
    pub method: String,
    pub seed: u64,
    #[serde(rename = "gen")]
    pub generality: f64,
    #[serde(rename = "loc")]
    pub locality: f64,
    pub mean: f64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "macro")]
    pub macro_avg: Averages,
    #[serde(rename = "split")]
    pub per_split: Vec<SplitRow>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, Averages>,
}

fn average<'a>(rows: impl Iterator<Item = &'a SplitMetrics>) -> Averages {
    let (mut g, mut l, mut n) = (0.0, 0.0, 0usize);
    for r in rows {
        g += r.generality;
        l += r.locality;
        n += 1;
    }
    let (g, l) = (g / n as f64, l / n as f64);
    Averages {
        generality: 100.0 * g,
        locality: 100.0 * l,
        mean: 100.0 * (g + l) / 2.0,
        splits: n,
    }
}

/// Unweighted mean over splits, plus per-tag means when a taxonomy is given.
pub fn aggregate(reports: &[SplitMetrics], tax: Option<&Taxonomy>) -> Result<EvalReport> {
    if reports.is_empty() {
        return Err(Error::Empty("split report list"));
    }
    let mut tags: BTreeMap<String, Vec<&SplitMetrics>> = BTreeMap::new();
    if let Some(tax) = tax {
        for r in reports {
            if let Some(split) = tax.split(&r.split) {
                for t in tax.split_tags(split) {
                    tags.entry(t).or_default().push(r);
                }
            }
        }
    }
    Ok(EvalReport {
        macro_avg: average(reports.iter()),
        per_split: reports
            .iter()
            .map(|r| SplitRow {
                split: r.split.clone(),
                method: r.method.clone(),
                seed: r.seed,
                generality: 100.0 * r.generality,
                locality: 100.0 * r.locality,
                mean: 100.0 * r.mean,
                m: r.m,
                n: r.n,
            })
            .collect(),
        tags: tags
            .into_iter()
            .map(|(t, rows)| (t, average(rows.into_iter())))
            .collect(),
    })
}

impl EvalReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_toml(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_toml(path.as_ref())
    }

    /// One-line summary for terminals.
    pub fn summary(&self) -> String {
        format!(
            "gen {:.1} loc {:.1} mean {:.1} over {} split(s)",
            self.macro_avg.generality,
            self.macro_avg.locality,
            self.macro_avg.mean,
            self.macro_avg.splits
        )
    }
}
