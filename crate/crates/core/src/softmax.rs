//! Softmax cross-entropy over a linear head, with row-level freezing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::ClassifierHead;
use crate::optim::{AdamW, CosineSchedule, EmaStopper, Prng, StopMode};
use crate::tensor::Tensor;

/// `-log softmax(logits)[target]` and its gradient `softmax - onehot`.
pub fn cross_entropy_loss(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::OutOfRange(format!(
            "target {target} with {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[target];
    let mut grad: Vec<f64> = exps.into_iter().map(|e| e / sum).collect();
    grad[target] -= 1.0;
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub metric: f64,
    pub ema: f64,
    pub best: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Head parameters in f64 for optimization.
#[derive(Debug, Clone)]
pub struct LinearParams {
    pub rows: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl LinearParams {
    pub fn from_head(head: &ClassifierHead) -> Self {
        Self {
            rows: head.num_labels(),
            dim: head.dim(),
            weights: head.weights().data().iter().map(|&x| x as f64).collect(),
            bias: head.bias().map(|b| b.iter().map(|&x| x as f64).collect()),
        }
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(r, w)| {
                let z: f64 = w.iter().zip(x).map(|(&a, &b)| a * b as f64).sum();
                z + self.bias.as_ref().map_or(0.0, |b| b[r])
            })
            .collect()
    }

    fn row_width(&self) -> usize {
        self.dim + usize::from(self.bias.is_some())
    }

    fn gather(&self, rows: &[usize]) -> Vec<f64> {
        let mut flat = Vec::with_capacity(rows.len() * self.row_width());
        for &r in rows {
            flat.extend_from_slice(&self.weights[r * self.dim..(r + 1) * self.dim]);
            if let Some(b) = &self.bias {
                flat.push(b[r]);
            }
        }
        flat
    }

    fn scatter(&mut self, rows: &[usize], flat: &[f64]) {
        let width = self.row_width();
        for (k, &r) in rows.iter().enumerate() {
            let chunk = &flat[k * width..(k + 1) * width];
            self.weights[r * self.dim..(r + 1) * self.dim].copy_from_slice(&chunk[..self.dim]);
            if let Some(b) = &mut self.bias {
                b[r] = chunk[self.dim];
            }
        }
    }

    /// Mean cross-entropy over `batch` and its gradient w.r.t. the `rows` parameters,
    /// laid out like `gather(rows)`.
    pub fn loss_and_grad(&self, batch: &[(&[f32], usize)], rows: &[usize]) -> Result<(f64, Vec<f64>)> {
        let width = self.row_width();
        let mut grad = vec![0.0; rows.len() * width];
        let mut total = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for &(x, target) in batch {
            let (loss, dlogits) = cross_entropy_loss(&self.logits(x), target)?;
            total += loss;
            for (k, &r) in rows.iter().enumerate() {
                let g = dlogits[r] * scale;
                let chunk = &mut grad[k * width..(k + 1) * width];
                for (gw, &xi) in chunk[..self.dim].iter_mut().zip(x) {
                    *gw += g * xi as f64;
                }
                if self.bias.is_some() {
                    chunk[self.dim] += g;
                }
            }
        }
        Ok((total * scale, grad))
    }

    pub fn mean_loss(&self, samples: &[(&[f32], usize)]) -> Result<f64> {
        let mut total = 0.0;
        for &(x, t) in samples {
            total += cross_entropy_loss(&self.logits(x), t)?.0;
        }
        Ok(total / samples.len() as f64)
    }

    /// Writes the parameters back as a head. Rows outside `trained` keep the
    /// original f32 values bit for bit.
    pub fn to_head(&self, original: &ClassifierHead, trained: &[usize]) -> Result<ClassifierHead> {
        let mut w = original.weights().data().to_vec();
        let mut b = original.bias().map(<[f32]>::to_vec);
        for &r in trained {
            for c in 0..self.dim {
                w[r * self.dim + c] = self.weights[r * self.dim + c] as f32;
            }
            if let (Some(b), Some(src)) = (&mut b, &self.bias) {
                b[r] = src[r] as f32;
            }
        }
        ClassifierHead::new(
            original.labels().to_vec(),
            Tensor::matrix(self.rows, self.dim, w)?,
            b,
        )
    }
}

/// Mini-batch AdamW with cosine annealing and EMA early stopping.
///
/// Only the rows listed in `trainable` (and their biases) are updated. The
/// stopping metric is the mean training loss of the epoch, or the loss on
/// `validation` when given.
pub fn train_rows(
    params: &mut LinearParams,
    trainable: &[usize],
    samples: &[(&[f32], usize)],
    validation: Option<&[(&[f32], usize)]>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut rng = Prng::new(cfg.seed);
    let schedule = CosineSchedule::new(cfg.lr, cfg.max_epochs);
    let mut flat = params.gather(trainable);
    let mut opt = AdamW::new(flat.len(), cfg.lr, cfg.weight_decay);
    let mut stopper = EmaStopper::new(StopMode::Minimize);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 0..cfg.max_epochs {
        opt.lr = schedule.lr(epoch)?;
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f32], usize)> = chunk.iter().map(|&i| samples[i]).collect();
            let (loss, grad) = params.loss_and_grad(&batch, trainable)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            opt.step(&mut flat, &grad)?;
            params.scatter(trainable, &flat);
            epoch_loss += loss;
            batches += 1;
        }
        let metric = match validation {
            Some(val) => params.mean_loss(val)?,
            None => epoch_loss / batches as f64,
        };
        if !metric.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: metric,
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
    Ok(log)
}
