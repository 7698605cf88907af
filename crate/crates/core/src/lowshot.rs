//! Few-shot fine-tuning of a split head on frozen features.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureDataset;
use crate::editor::{split_head, SplitDeps};
use crate::error::{Error, Result};
use crate::head::{ClassifierHead, EditMethod, EditedHead};
use crate::softmax::{train_rows, LinearParams, TrainConfig, TrainLog};
use crate::taxonomy::SplitSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    /// Only the new subcategory rows (and their biases) are trained.
    NewOnly,
    /// Every row of the edited head is trained.
    HeadNew,
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::NewOnly => "new-only",
            Scope::HeadNew => "head+new",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "new-only" => Ok(Scope::NewOnly),
            "head+new" | "head-new" => Ok(Scope::HeadNew),
            other => Err(Error::Config(format!("unknown scope {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub shots: usize,
    pub scope: Scope,
    pub init: EditMethod,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            shots: 1,
            scope: Scope::NewOnly,
            init: EditMethod::CoarseCopy,
            lr: 1e-3,
            weight_decay: 1e-3,
            batch_size: 16,
            max_epochs: 100,
            seed: 0,
        }
    }
}

/// Picks the first `shots` samples of each subcategory in dataset order.
pub fn select_shots(
    split: &SplitSpec,
    train: &FeatureDataset,
    shots: usize,
) -> Result<Vec<(usize, usize)>> {
    if shots == 0 {
        return Err(Error::Config("shots must be at least 1".into()));
    }
    let mut taken = vec![0usize; split.k()];
    let mut picked = Vec::with_capacity(shots * split.k());
    for (i, label) in train.labels().iter().enumerate() {
        let j = split
            .subcategories
            .iter()
            .position(|s| &s.id == label)
            .ok_or_else(|| {
                Error::Config(format!(
                    "training label {label:?} is not a subcategory of {:?}",
                    split.coarse_id
                ))
            })?;
        if taken[j] < shots {
            taken[j] += 1;
            picked.push((i, j));
        }
    }
    for (s, &n) in split.subcategories.iter().zip(&taken) {
        if n < shots {
            return Err(Error::InsufficientShots {
                label: s.id.clone(),
                needed: shots,
                found: n,
            });
        }
    }
    Ok(picked)
}

/// Splits `head` with `cfg.init`, then fine-tunes with cross-entropy over the
/// full edited label space.
///
/// With [`Scope::NewOnly`] the retained rows are returned bit-identical.
/// `validation`, when given, drives early stopping instead of the training loss.
pub fn finetune_split(
    head: &ClassifierHead,
    split: &SplitSpec,
    train: &FeatureDataset,
    validation: Option<&FeatureDataset>,
    cfg: &FinetuneConfig,
    deps: &SplitDeps<'_>,
) -> Result<(EditedHead, TrainLog)> {
    if train.dim() != head.dim() {
        return Err(Error::DimMismatch {
            expected: head.dim(),
            got: train.dim(),
        });
    }
    let picked = select_shots(split, train, cfg.shots)?;
    let edited = split_head(head, split, cfg.init, deps, cfg.seed)?;
    let retained = edited.retained();
    let samples: Vec<(&[f32], usize)> = picked
        .iter()
        .map(|&(i, j)| (train.sample(i).0, retained + j))
        .collect();

    let val_samples = validation
        .map(|v| {
            v.iter()
                .map(|(x, l)| {
                    edited
                        .head
                        .index_of(l)
                        .map(|t| (x, t))
                        .ok_or_else(|| Error::UnknownLabel(l.to_string()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;

    let trainable: Vec<usize> = match cfg.scope {
        Scope::NewOnly => (retained..edited.head.num_labels()).collect(),
        Scope::HeadNew => (0..edited.head.num_labels()).collect(),
    };
    let mut params = LinearParams::from_head(&edited.head);
    let log = train_rows(
        &mut params,
        &trainable,
        &samples,
        val_samples.as_deref(),
        &TrainConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            batch_size: cfg.batch_size,
            max_epochs: cfg.max_epochs,
            seed: cfg.seed,
        },
    )?;
    let head = params.to_head(&edited.head, &trainable)?;
    Ok((
        EditedHead {
            head,
            provenance: edited.provenance,
        },
        log,
    ))
}
