//! Seeded synthetic compositional problems with planted structure.
//!
//! Class `(i, j)` draws features `b_i + alpha * m_j + noise` where the base and
//! modifier directions are orthonormal. Text embeddings are built the same way
//! from a second orthonormal set, so `phi("base_i mod_j")` is the normalized
//! sum of the base and modifier embeddings. The held-out base is collapsed
//! into one coarse label, which the generated split spec divides again.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureDataset, Role};
use crate::doc::{ensure_dir, read_toml, write_toml};
use crate::embedding::TextEmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::generality;
use crate::head::ClassifierHead;
use crate::optim::Prng;
use crate::softmax::{train_rows, LinearParams, TrainConfig, TrainLog};
use crate::taxonomy::{Category, Granularity, SplitSpec, Subcategory, Taxonomy};
use crate::tensor::{save_tensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadTraining {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
}

impl Default for HeadTraining {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-3,
            batch_size: 16,
            max_epochs: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Feature dimension.
    pub d: usize,
    /// Text embedding dimension.
    pub n: usize,
    pub bases: usize,
    pub modifiers: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub held_out: usize,
    pub seed: u64,
    pub head: HeadTraining,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            d: 64,
            n: 32,
            bases: 4,
            modifiers: 4,
            train_per_class: 50,
            test_per_class: 50,
            sigma: 0.1,
            alpha: 1.0,
            held_out: 0,
            seed: 0,
            head: HeadTraining::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.bases < 2 || self.modifiers < 2 {
            return bad(format!(
                "need at least 2 bases and 2 modifiers, got {} and {}",
                self.bases, self.modifiers
            ));
        }
        let k = self.bases + self.modifiers;
        if self.d < k || self.n < k {
            return bad(format!(
                "d = {} and n = {} must both be at least bases + modifiers = {k}",
                self.d, self.n
            ));
        }
        if self.held_out >= self.bases {
            return bad(format!("held_out {} out of range", self.held_out));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return bad("sample counts must be positive".into());
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad(format!("sigma must be finite and non-negative, got {}", self.sigma));
        }
        if !self.alpha.is_finite() {
            return bad(format!("alpha must be finite, got {}", self.alpha));
        }
        let h = &self.head;
        if !(h.lr > 0.0 && h.lr.is_finite()) || h.batch_size == 0 || h.max_epochs == 0 {
            return bad("head training needs lr > 0, batch_size > 0 and max_epochs > 0".into());
        }
        Ok(())
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.head.lr,
            weight_decay: self.head.weight_decay,
            batch_size: self.head.batch_size,
            max_epochs: self.head.max_epochs,
            seed,
        }
    }
}

pub fn fine_id(base: usize, modifier: usize) -> String {
    format!("b{base}_m{modifier}")
}

pub fn coarse_id(base: usize) -> String {
    format!("b{base}")
}

pub fn base_text(base: usize) -> String {
    format!("base_{base}")
}

pub fn modifier_text(modifier: usize) -> String {
    format!("mod_{modifier}")
}

pub fn full_text(base: usize, modifier: usize) -> String {
    format!("base_{base} mod_{modifier}")
}

/// Everything one seed of the benchmark produces.
#[derive(Debug, Clone)]
pub struct SynthBundle {
    pub config: SynthConfig,
    pub taxonomy: Taxonomy,
    /// Mixed-granularity head trained on `train`.
    pub head: ClassifierHead,
    pub head_log: TrainLog,
    pub embeddings: TextEmbeddingTable,
    /// Mixed-granularity labels.
    pub train: FeatureDataset,
    /// Fine labels for every class.
    pub test: FeatureDataset,
    /// Fine-labelled training samples of the held-out base.
    pub split_train: FeatureDataset,
    /// Fully fine head, rows in the split label space order.
    pub oracle: ClassifierHead,
    /// Oracle accuracy on the whole test set.
    pub oracle_accuracy: f64,
    /// Planted base directions, one row each.
    pub base_dirs: Tensor,
    /// Planted modifier directions, one row each.
    pub modifier_dirs: Tensor,
}

/// Orthonormal rows drawn from seeded Gaussians by modified Gram–Schmidt.
fn orthonormal(count: usize, dim: usize, rng: &mut Prng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gaussian(0.0, 1.0)).collect();
        for q in &out {
            let p: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(q) {
                *a -= p * b;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            out.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    out
}

fn normalized(v: &[f64]) -> Vec<f32> {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.iter().map(|a| (a / norm) as f32).collect()
}

fn to_tensor(rows: &[Vec<f64>]) -> Result<Tensor> {
    let rows: Vec<Vec<f32>> = rows
        .iter()
        .map(|r| r.iter().map(|&a| a as f32).collect())
        .collect();
    Tensor::from_rows(&rows)
}

fn train_head(
    labels: Vec<String>,
    data: &FeatureDataset,
    cfg: &TrainConfig,
) -> Result<(ClassifierHead, TrainLog)> {
    let d = data.dim();
    let zero = ClassifierHead::new(
        labels.clone(),
        Tensor::matrix(labels.len(), d, vec![0.0; labels.len() * d])?,
        Some(vec![0.0; labels.len()]),
    )?;
    let samples = data
        .iter()
        .map(|(x, l)| {
            zero.index_of(l)
                .map(|t| (x, t))
                .ok_or_else(|| Error::UnknownLabel(l.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<usize> = (0..labels.len()).collect();
    let mut params = LinearParams::from_head(&zero);
    let log = train_rows(&mut params, &rows, &samples, None, cfg)?;
    Ok((params.to_head(&zero, &rows)?, log))
}

fn accuracy(head: &ClassifierHead, data: &FeatureDataset) -> Result<f64> {
    let mut correct = 0usize;
    for (x, l) in data.iter() {
        correct += usize::from(head.predict(x)? == l);
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Generates one benchmark instance. A pure function of `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthBundle> {
    cfg.validate()?;
    let (nb, nm, h) = (cfg.bases, cfg.modifiers, cfg.held_out);
    let mut rng = Prng::new(cfg.seed);

    let dirs = orthonormal(nb + nm, cfg.d, &mut rng);
    let (bases, mods) = dirs.split_at(nb);
    let text = orthonormal(nb + nm, cfg.n, &mut rng);
    let (u, v) = text.split_at(nb);

    let mut keys = Vec::new();
    let mut rows = Vec::new();
    for (i, ui) in u.iter().enumerate() {
        keys.push(base_text(i));
        rows.push(normalized(ui));
    }
    for (j, vj) in v.iter().enumerate() {
        keys.push(modifier_text(j));
        rows.push(normalized(vj));
    }
    for (i, ui) in u.iter().enumerate() {
        for (j, vj) in v.iter().enumerate() {
            keys.push(full_text(i, j));
            let sum: Vec<f64> = ui.iter().zip(vj).map(|(a, b)| a + b).collect();
            rows.push(normalized(&sum));
        }
    }
    let embeddings = TextEmbeddingTable::new(keys, Tensor::from_rows(&rows)?)?;

    let mut categories = Vec::new();
    for i in 0..nb {
        if i == h {
            categories.push(Category {
                id: coarse_id(i),
                text: base_text(i),
                granularity: Granularity::Coarse,
                group: None,
                tags: vec![],
                modifier_text: None,
            });
            continue;
        }
        for j in 0..nm {
            categories.push(Category {
                id: fine_id(i, j),
                text: full_text(i, j),
                granularity: Granularity::Fine,
                group: Some(format!("g{i}")),
                tags: vec![],
                modifier_text: None,
            });
        }
    }
    let row_order: Vec<String> = categories.iter().map(|c| c.id.clone()).collect();
    let split = SplitSpec {
        coarse_id: coarse_id(h),
        tags: vec!["synthetic".into()],
        subcategories: (0..nm)
            .map(|j| Subcategory {
                id: fine_id(h, j),
                full_text: full_text(h, j),
                modifier_text: String::new(),
            })
            .collect(),
    };
    let taxonomy = Taxonomy::build(categories, &[], vec![split], row_order.clone())?;

    let sample = |i: usize, j: usize, rng: &mut Prng| -> Vec<f32> {
        (0..cfg.d)
            .map(|t| {
                (bases[i][t] + cfg.alpha * mods[j][t] + rng.gaussian(0.0, cfg.sigma)) as f32
            })
            .collect()
    };
    let draw = |per_class: usize, rng: &mut Prng| {
        let mut xs = Vec::with_capacity(nb * nm * per_class);
        let mut fine = Vec::with_capacity(xs.capacity());
        for i in 0..nb {
            for j in 0..nm {
                for _ in 0..per_class {
                    xs.push(sample(i, j, rng));
                    fine.push((i, j));
                }
            }
        }
        (xs, fine)
    };
    let (train_x, train_fine) = draw(cfg.train_per_class, &mut rng);
    let (test_x, test_fine) = draw(cfg.test_per_class, &mut rng);
    let head_seed = rng.next_u64();
    let oracle_seed = rng.next_u64();

    let mixed_label = |&(i, j): &(usize, usize)| {
        if i == h {
            coarse_id(i)
        } else {
            fine_id(i, j)
        }
    };
    let train = FeatureDataset::new(
        Tensor::from_rows(&train_x)?,
        train_fine.iter().map(mixed_label).collect(),
        Role::Train,
    )?;
    let fine_train = FeatureDataset::new(
        Tensor::from_rows(&train_x)?,
        train_fine.iter().map(|&(i, j)| fine_id(i, j)).collect(),
        Role::Train,
    )?;
    let test = FeatureDataset::new(
        Tensor::from_rows(&test_x)?,
        test_fine.iter().map(|&(i, j)| fine_id(i, j)).collect(),
        Role::Eval,
    )?;
    let held = coarse_id(h);
    let split_train = fine_train.filter(|l| l.starts_with(&format!("{held}_")))?;

    let (head, head_log) = train_head(row_order, &train, &cfg.train_config(head_seed))?;
    let split = &taxonomy.splits[0];
    let (oracle, _) = train_head(
        taxonomy.split_label_space(split),
        &fine_train,
        &cfg.train_config(oracle_seed),
    )?;
    let oracle_accuracy = accuracy(&oracle, &test)?;

    Ok(SynthBundle {
        config: *cfg,
        taxonomy,
        head,
        head_log,
        embeddings,
        train,
        test,
        split_train,
        oracle,
        oracle_accuracy,
        base_dirs: to_tensor(bases)?,
        modifier_dirs: to_tensor(mods)?,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleDoc {
    config: SynthConfig,
    oracle_accuracy: f64,
    head_epochs: usize,
}

impl SynthBundle {
    pub fn split(&self) -> &SplitSpec {
        &self.taxonomy.splits[0]
    }

    /// Writes every artifact in the ordinary file formats under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        ensure_dir(dir)?;
        self.taxonomy.save(dir.join("taxonomy.toml"))?;
        self.head.save(dir.join("head.toml"))?;
        self.oracle.save(dir.join("oracle.toml"))?;
        self.embeddings.save(dir.join("embeddings.toml"))?;
        self.train.save(dir.join("train.toml"))?;
        self.test.save(dir.join("test.toml"))?;
        self.split_train.save(dir.join("split_train.toml"))?;
        save_tensor(&self.base_dirs, dir.join("base_dirs.cspl"))?;
        save_tensor(&self.modifier_dirs, dir.join("modifier_dirs.cspl"))?;
        write_toml(
            &dir.join("synth.toml"),
            &BundleDoc {
                config: self.config,
                oracle_accuracy: self.oracle_accuracy,
                head_epochs: self.head_log.epochs.len(),
            },
        )
    }

    /// Reads back a directory written by [`SynthBundle::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let doc: BundleDoc = read_toml(&dir.join("synth.toml"))?;
        Ok(Self {
            config: doc.config,
            taxonomy: Taxonomy::load(dir.join("taxonomy.toml"))?,
            head: ClassifierHead::load(dir.join("head.toml"))?,
            head_log: TrainLog::default(),
            embeddings: TextEmbeddingTable::load(dir.join("embeddings.toml"))?,
            train: FeatureDataset::load(dir.join("train.toml"))?,
            test: FeatureDataset::load(dir.join("test.toml"))?,
            split_train: FeatureDataset::load(dir.join("split_train.toml"))?,
            oracle: ClassifierHead::load(dir.join("oracle.toml"))?,
            oracle_accuracy: doc.oracle_accuracy,
            base_dirs: crate::tensor::load_tensor(dir.join("base_dirs.cspl"))?,
            modifier_dirs: crate::tensor::load_tensor(dir.join("modifier_dirs.cspl"))?,
        })
    }
}

/// Generality of `edited` minus the oracle's on the same split's test samples.
pub fn oracle_eval(bundle: &SynthBundle, edited: &ClassifierHead) -> Result<f64> {
    if edited.dim() != bundle.oracle.dim() {
        return Err(Error::DimMismatch {
            expected: bundle.oracle.dim(),
            got: edited.dim(),
        });
    }
    let split = bundle.split();
    let (ours, _) = generality(edited, split, &bundle.test)?;
    let (oracle, _) = generality(&bundle.oracle, split, &bundle.test)?;
    Ok(ours - oracle)
}

/// A random head, taxonomy and embedding table for property tests.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub taxonomy: Taxonomy,
    pub head: ClassifierHead,
    pub embeddings: TextEmbeddingTable,
}

/// Draws 1 to 3 groups of 2 to 4 members, 1 or 2 split targets with 2 to 4
/// subcategories, up to 2 ungrouped fine categories, a shuffled row order and
/// Gaussian weights. Every text any method looks up has an embedding.
pub fn random_instance(seed: u64) -> Result<RandomInstance> {
    let mut rng = Prng::new(seed);
    let dim = 2 + rng.below(11);
    let n = 4 + rng.below(5);
    let mut categories = Vec::new();
    let mut texts: Vec<String> = Vec::new();
    let mods: Vec<String> = (0..6).map(|j| format!("mod{j}")).collect();
    texts.extend(mods.iter().cloned());

    for g in 0..1 + rng.below(3) {
        let mut picks: Vec<usize> = (0..mods.len()).collect();
        rng.shuffle(&mut picks);
        texts.push(format!("base{g}"));
        for &j in &picks[..2 + rng.below(3)] {
            let text = format!("base{g} {}", mods[j]);
            texts.push(text.clone());
            categories.push(Category {
                id: format!("g{g}_m{j}"),
                text,
                granularity: Granularity::Fine,
                group: Some(format!("group{g}")),
                tags: vec![],
                modifier_text: None,
            });
        }
    }
    for s in 0..rng.below(3) {
        let text = format!("solo{s}");
        texts.push(text.clone());
        categories.push(Category {
            id: text.clone(),
            text,
            granularity: Granularity::Fine,
            group: None,
            tags: vec![],
            modifier_text: None,
        });
    }
    let mut splits = Vec::new();
    for q in 0..1 + rng.below(2) {
        let text = format!("coarse{q}");
        texts.push(text.clone());
        categories.push(Category {
            id: format!("c{q}"),
            text: text.clone(),
            granularity: Granularity::Coarse,
            group: None,
            tags: vec![format!("tag{}", q % 2)],
            modifier_text: None,
        });
        let mut picks: Vec<usize> = (0..mods.len()).collect();
        rng.shuffle(&mut picks);
        splits.push(SplitSpec {
            coarse_id: format!("c{q}"),
            tags: vec!["random".into()],
            subcategories: picks[..2 + rng.below(3)]
                .iter()
                .map(|&j| {
                    let full = format!("{text} {}", mods[j]);
                    texts.push(full.clone());
                    Subcategory {
                        id: format!("c{q}_s{j}"),
                        full_text: full,
                        modifier_text: String::new(),
                    }
                })
                .collect(),
        });
    }
    let mut row_order: Vec<String> = categories.iter().map(|c| c.id.clone()).collect();
    rng.shuffle(&mut row_order);
    let taxonomy = Taxonomy::build(categories, &[], splits, row_order.clone())?;

    let rows = row_order.len();
    let weights = (0..rows * dim).map(|_| rng.gaussian(0.0, 1.0) as f32).collect();
    let bias = (rng.below(2) == 1).then(|| (0..rows).map(|_| rng.gaussian(0.0, 1.0) as f32).collect());
    let head = ClassifierHead::new(row_order, Tensor::matrix(rows, dim, weights)?, bias)?;

    texts.sort();
    texts.dedup();
    let emb_rows: Vec<Vec<f32>> = texts
        .iter()
        .map(|_| {
            let v: Vec<f64> = (0..n).map(|_| rng.gaussian(0.0, 1.0)).collect();
            normalized(&v)
        })
        .collect();
    let embeddings = TextEmbeddingTable::new(texts, Tensor::from_rows(&emb_rows)?)?;
    Ok(RandomInstance {
        taxonomy,
        head,
        embeddings,
    })
}
