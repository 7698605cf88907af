//! A one-hidden-layer ReLU regressor from text embeddings to head-weight space.
//!
//! Trained with squared error on (embedding, weight vector) pairs mined from
//! the modifier dictionary and, optionally, from the categories themselves.
//! Its output for an unseen modifier text is used as that modifier's vector.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dictionary::ModifierDictionary;
use crate::doc::{ensure_dir, read_toml, write_toml};
use crate::embedding::TextEmbeddingTable;
use crate::error::{Error, Result};
use crate::head::ClassifierHead;
use crate::optim::{AdamW, CosineSchedule, EmaStopper, Prng, StopMode};
use crate::softmax::{EpochRecord, TrainLog};
use crate::taxonomy::Taxonomy;
use crate::tensor::{load_tensor, save_tensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Composition {
    /// Modifier pairs only.
    #[serde(rename = "mod")]
    Mod,
    /// Modifier pairs plus category and pseudo-coarse pairs.
    #[serde(rename = "mod+cat")]
    ModCat,
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Composition::Mod => "mod",
            Composition::ModCat => "mod+cat",
        })
    }
}

impl FromStr for Composition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mod" => Ok(Composition::Mod),
            "mod+cat" => Ok(Composition::ModCat),
            other => Err(Error::Config(format!("unknown composition {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPairs {
    pub inputs: Vec<Vec<f32>>,
    pub targets: Vec<Vec<f32>>,
    pub composition: Composition,
}

impl TrainingPairs {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn push(&mut self, input: &[f32], target: &[f32]) {
        self.inputs.push(input.to_vec());
        self.targets.push(target.to_vec());
    }
}

pub fn build_training_pairs(
    dict: &ModifierDictionary,
    head: &ClassifierHead,
    tax: &Taxonomy,
    emb: &TextEmbeddingTable,
    composition: Composition,
) -> Result<TrainingPairs> {
    let mut pairs = TrainingPairs {
        inputs: Vec::new(),
        targets: Vec::new(),
        composition,
    };
    for e in &dict.entries {
        pairs.push(emb.get(&e.modifier_text)?, &e.vector);
    }
    if composition == Composition::ModCat {
        for id in &tax.row_order {
            let c = tax.category(id).expect("row_order lists known ids");
            pairs.push(emb.get(&c.text)?, head.row_of(id)?);
        }
        for c in &dict.coarse_vectors {
            pairs.push(emb.get(&c.base_text)?, &c.vector);
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            hidden: 384,
            lr: 1e-3,
            weight_decay: 1e-2,
            batch_size: 10,
            max_epochs: 100,
            seed: 0,
        }
    }
}

/// `g(x) = W2 relu(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentModel {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl AlignmentModel {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        AlignParams::zeros(input, hidden, output).to_model()
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn forward(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let params = AlignParams::from_model(self);
        let out = params.forward(x).output;
        Ok(out.into_iter().map(|v| v as f32).collect())
    }

    pub fn save(&self, dir: impl AsRef<Path>, cfg: &AlignConfig, composition: Composition) -> Result<()> {
        let dir = dir.as_ref();
        ensure_dir(dir)?;
        for (name, t) in [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)] {
            save_tensor(t, dir.join(format!("{name}.cspl")))?;
        }
        write_toml(
            &dir.join("alignment.toml"),
            &AlignManifest {
                input_dim: self.input_dim(),
                hidden_dim: self.hidden_dim(),
                output_dim: self.output_dim(),
                activation: "relu".into(),
                composition,
                config: *cfg,
            },
        )
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: AlignManifest = read_toml(&dir.join("alignment.toml"))?;
        if manifest.activation != "relu" {
            return Err(Error::Config(format!(
                "unsupported activation {:?}",
                manifest.activation
            )));
        }
        let load = |name: &str| load_tensor(dir.join(format!("{name}.cspl")));
        let model = Self {
            w1: load("w1")?,
            b1: load("b1")?,
            w2: load("w2")?,
            b2: load("b2")?,
        };
        let (n, h, m) = (manifest.input_dim, manifest.hidden_dim, manifest.output_dim);
        let shapes_ok = model.w1.dims() == [h, n]
            && model.b1.dims() == [h]
            && model.w2.dims() == [m, h]
            && model.b2.dims() == [m];
        if !shapes_ok {
            return Err(Error::Shape("alignment tensors disagree with manifest".into()));
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlignManifest {
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    activation: String,
    composition: Composition,
    config: AlignConfig,
}

/// f64 working copy of the model parameters.
#[derive(Debug, Clone)]
pub struct AlignParams {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    /// Layout: W1 (hidden x input), b1, W2 (output x hidden), b2.
    pub flat: Vec<f64>,
}

pub struct Forward {
    pre: Vec<f64>,
    act: Vec<f64>,
    pub output: Vec<f64>,
}

impl AlignParams {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            flat: vec![0.0; hidden * input + hidden + output * hidden + output],
        }
    }

    /// Weights ~ N(0, (1/sqrt(fan_in))^2), biases zero.
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut Prng) -> Self {
        let mut p = Self::zeros(input, hidden, output);
        let (w1, w2) = (p.w1_range(), p.w2_range());
        let s1 = 1.0 / (input as f64).sqrt();
        for v in &mut p.flat[w1] {
            *v = rng.gaussian(0.0, s1);
        }
        let s2 = 1.0 / (hidden as f64).sqrt();
        for v in &mut p.flat[w2] {
            *v = rng.gaussian(0.0, s2);
        }
        p
    }

    fn w1_range(&self) -> std::ops::Range<usize> {
        0..self.hidden * self.input
    }

    fn b1_range(&self) -> std::ops::Range<usize> {
        let s = self.hidden * self.input;
        s..s + self.hidden
    }

    fn w2_range(&self) -> std::ops::Range<usize> {
        let s = self.b1_range().end;
        s..s + self.output * self.hidden
    }

    fn b2_range(&self) -> std::ops::Range<usize> {
        let s = self.w2_range().end;
        s..s + self.output
    }

    pub fn from_model(model: &AlignmentModel) -> Self {
        let flat = [&model.w1, &model.b1, &model.w2, &model.b2]
            .iter()
            .flat_map(|t| t.data().iter().map(|&x| x as f64))
            .collect();
        Self {
            input: model.input_dim(),
            hidden: model.hidden_dim(),
            output: model.output_dim(),
            flat,
        }
    }

    pub fn to_model(&self) -> AlignmentModel {
        let part = |r: std::ops::Range<usize>| -> Vec<f32> {
            self.flat[r].iter().map(|&x| x as f32).collect()
        };
        AlignmentModel {
            w1: Tensor::matrix(self.hidden, self.input, part(self.w1_range())).expect("shape"),
            b1: Tensor::vector(part(self.b1_range())).expect("shape"),
            w2: Tensor::matrix(self.output, self.hidden, part(self.w2_range())).expect("shape"),
            b2: Tensor::vector(part(self.b2_range())).expect("shape"),
        }
    }

    pub fn forward(&self, x: &[f32]) -> Forward {
        let w1 = &self.flat[self.w1_range()];
        let b1 = &self.flat[self.b1_range()];
        let w2 = &self.flat[self.w2_range()];
        let b2 = &self.flat[self.b2_range()];
        let pre: Vec<f64> = w1
            .chunks_exact(self.input)
            .zip(b1)
            .map(|(row, &b)| b + row.iter().zip(x).map(|(&w, &xi)| w * xi as f64).sum::<f64>())
            .collect();
        let act: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
        let output = w2
            .chunks_exact(self.hidden)
            .zip(b2)
            .map(|(row, &b)| b + row.iter().zip(&act).map(|(&w, &a)| w * a).sum::<f64>())
            .collect();
        Forward { pre, act, output }
    }

    /// Mean over the batch of `||g(x) - v||^2`, and its gradient.
    pub fn loss_and_grad(&self, batch: &[(&[f32], &[f32])]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.flat.len()];
        let mut total = 0.0;
        let scale = 1.0 / batch.len() as f64;
        let (w1r, b1r, w2r, b2r) = (self.w1_range(), self.b1_range(), self.w2_range(), self.b2_range());
        let w2 = &self.flat[w2r.clone()];
        for &(x, target) in batch {
            let fwd = self.forward(x);
            let dy: Vec<f64> = fwd
                .output
                .iter()
                .zip(target)
                .map(|(&y, &t)| {
                    let diff = y - t as f64;
                    total += diff * diff;
                    2.0 * diff * scale
                })
                .collect();
            let mut da = vec![0.0; self.hidden];
            for (o, &g) in dy.iter().enumerate() {
                grad[b2r.start + o] += g;
                let row = &w2[o * self.hidden..(o + 1) * self.hidden];
                let grow = &mut grad[w2r.start + o * self.hidden..w2r.start + (o + 1) * self.hidden];
                for ((gw, &a), (d, &w)) in grow.iter_mut().zip(&fwd.act).zip(da.iter_mut().zip(row)) {
                    *gw += g * a;
                    *d += g * w;
                }
            }
            for (j, (&z, &d)) in fwd.pre.iter().zip(&da).enumerate() {
                if z <= 0.0 {
                    continue;
                }
                grad[b1r.start + j] += d;
                let grow = &mut grad[w1r.start + j * self.input..w1r.start + (j + 1) * self.input];
                for (gw, &xi) in grow.iter_mut().zip(x) {
                    *gw += d * xi as f64;
                }
            }
        }
        (total * scale, grad)
    }

    pub fn mean_loss(&self, batch: &[(&[f32], &[f32])]) -> f64 {
        batch
            .iter()
            .map(|&(x, t)| {
                self.forward(x)
                    .output
                    .iter()
                    .zip(t)
                    .map(|(&y, &v)| (y - v as f64).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / batch.len() as f64
    }

    /// Mean cosine between predictions and targets; zero-norm pairs count as 0.
    pub fn mean_cosine(&self, batch: &[(&[f32], &[f32])]) -> f64 {
        batch
            .iter()
            .map(|&(x, t)| {
                let y = self.forward(x).output;
                let dot: f64 = y.iter().zip(t).map(|(&a, &b)| a * b as f64).sum();
                let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
                let nt = t.iter().map(|&b| (b as f64).powi(2)).sum::<f64>().sqrt();
                if ny == 0.0 || nt == 0.0 {
                    0.0
                } else {
                    dot / (ny * nt)
                }
            })
            .sum::<f64>()
            / batch.len() as f64
    }
}

/// Fits the alignment model by mini-batch AdamW with cosine annealing.
///
/// Pairs are reshuffled every epoch; the last short batch is kept. Training
/// stops early when the EMA of the mean prediction/target cosine over all
/// pairs stops improving.
pub fn train_alignment(pairs: &TrainingPairs, cfg: &AlignConfig) -> Result<(AlignmentModel, TrainLog)> {
    if pairs.is_empty() {
        return Err(Error::Empty("training pairs"));
    }
    if cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(Error::Config("batch size and hidden width must be positive".into()));
    }
    let (n, m) = (pairs.inputs[0].len(), pairs.targets[0].len());
    for (x, t) in pairs.inputs.iter().zip(&pairs.targets) {
        if x.len() != n || t.len() != m {
            return Err(Error::DimMismatch {
                expected: if x.len() != n { n } else { m },
                got: if x.len() != n { x.len() } else { t.len() },
            });
        }
    }
    let all: Vec<(&[f32], &[f32])> = pairs
        .inputs
        .iter()
        .zip(&pairs.targets)
        .map(|(x, t)| (x.as_slice(), t.as_slice()))
        .collect();

    let mut rng = Prng::new(cfg.seed);
    let mut params = AlignParams::init(n, cfg.hidden, m, &mut rng);
    let mut opt = AdamW::new(params.flat.len(), cfg.lr, cfg.weight_decay);
    let schedule = CosineSchedule::new(cfg.lr, cfg.max_epochs);
    let mut stopper = EmaStopper::new(StopMode::Maximize);
    let mut order: Vec<usize> = (0..all.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..cfg.max_epochs {
        opt.lr = schedule.lr(epoch)?;
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f32], &[f32])> = chunk.iter().map(|&i| all[i]).collect();
            let (loss, grad) = params.loss_and_grad(&batch);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            opt.step(&mut params.flat, &grad)?;
        }
        let metric = params.mean_cosine(&all);
        if !metric.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: params.mean_loss(&all),
            });
        }
        let stop = stopper.update(metric)?;
        log.epochs.push(EpochRecord {
            epoch,
            lr: opt.lr,
            metric,
            ema: stopper.ema().unwrap_or(metric),
            best: stopper.best(),
        });
        if stop {
            log.stopped_early = true;
            break;
        }
    }
    Ok((params.to_model(), log))
}

/// Vector for a modifier text: the model's output on its embedding.
pub fn synthesize_modifier(
    model: &AlignmentModel,
    modifier_text: &str,
    emb: &TextEmbeddingTable,
) -> Result<Vec<f32>> {
    model.forward(emb.get(modifier_text)?)
}
