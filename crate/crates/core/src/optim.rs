//! Deterministic optimization utilities shared by the training loops.

use std::f64::consts::PI;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::error::{Error, Result};

/// AdamW with decoupled weight decay over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(num_params: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimMismatch {
                expected: self.m.len(),
                got: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *p);
        }
        Ok(())
    }
}

/// `lr(t) = lr_min + (lr_max - lr_min) * (1 + cos(pi t / T)) / 2` on `0 <= t <= T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total: usize,
}

impl CosineSchedule {
    pub fn new(lr_max: f64, total: usize) -> Self {
        Self {
            lr_max,
            lr_min: 0.0,
            total,
        }
    }

    pub fn lr(&self, t: usize) -> Result<f64> {
        if t > self.total {
            return Err(Error::OutOfRange(format!(
                "epoch {t} beyond schedule length {}",
                self.total
            )));
        }
        if self.total == 0 {
            return Ok(self.lr_max);
        }
        let phase = PI * t as f64 / self.total as f64;
        Ok(self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + phase.cos()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopMode {
    Minimize,
    Maximize,
}

/// Early stopping on an exponential moving average of a per-epoch metric.
///
/// The first metric seeds the average. An epoch improves when the average
/// beats the best value seen by more than `delta` (absolute); `best` only
/// moves on improvement. Training stops once `patience` consecutive epochs
/// fail to improve.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaStopper {
    pub beta: f64,
    pub patience: usize,
    pub delta: f64,
    pub mode: StopMode,
    ema: Option<f64>,
    best: f64,
    stale: usize,
}

impl EmaStopper {
    pub fn new(mode: StopMode) -> Self {
        Self {
            beta: 0.95,
            patience: 5,
            delta: 1e-3,
            mode,
            ema: None,
            best: match mode {
                StopMode::Minimize => f64::INFINITY,
                StopMode::Maximize => f64::NEG_INFINITY,
            },
            stale: 0,
        }
    }

    pub fn ema(&self) -> Option<f64> {
        self.ema
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn stale(&self) -> usize {
        self.stale
    }

    /// Feeds one epoch's metric; returns true when training should stop.
    pub fn update(&mut self, metric: f64) -> Result<bool> {
        if !metric.is_finite() {
            return Err(Error::OutOfRange(format!("non-finite metric {metric}")));
        }
        let ema = match self.ema {
            None => {
                self.ema = Some(metric);
                self.best = metric;
                self.stale = 0;
                return Ok(false);
            }
            Some(prev) => self.beta * prev + (1.0 - self.beta) * metric,
        };
        self.ema = Some(ema);
        let improved = match self.mode {
            StopMode::Minimize => ema < self.best - self.delta,
            StopMode::Maximize => ema > self.best + self.delta,
        };
        if improved {
            self.best = ema;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        Ok(self.stale >= self.patience)
    }
}

/// xoshiro256** seeded through splitmix64.
///
/// Uniform floats take the top 53 bits of `next_u64`. Gaussians use the
/// cosine branch of Box-Muller on two fresh uniforms per draw.
#[derive(Debug, Clone)]
pub struct Prng {
    inner: Xoshiro256StarStar,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn gaussian(&mut self, mean: f64, std: f64) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        mean + std * (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        (self.uniform() * n as f64) as usize
    }

    /// Fisher-Yates, walking down from the last element.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
