use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Cosine learning-rate schedule with optional linear warmup and a floor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub total_epochs: usize,
    pub warmup_epochs: usize,
    pub min_ratio: f64,
}

impl CosineSchedule {
    pub fn new(total_epochs: usize) -> Self {
        CosineSchedule {
            total_epochs,
            warmup_epochs: 0,
            min_ratio: 0.01,
        }
    }

    /// Multiplier applied to the base learning rate at `epoch` (0-based).
    pub fn factor(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            return (epoch + 1) as f64 / self.warmup_epochs as f64;
        }
        let span = self.total_epochs.saturating_sub(self.warmup_epochs).max(1);
        let progress = ((epoch - self.warmup_epochs) as f64 / span as f64).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.min_ratio + (1.0 - self.min_ratio) * cosine
    }
}

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: CosineSchedule,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(params: &[Tensor<T>], lr: f64, weight_decay: f64, schedule: CosineSchedule) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update at the learning rate scheduled for `epoch`. Rejects the
    /// whole step, leaving parameters and moments untouched, if any gradient
    /// is non-finite.
    pub fn step(
        &mut self,
        params: &mut [Tensor<T>],
        grads: &[Tensor<T>],
        epoch: usize,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::Shape("optimizer parameter count mismatch".into()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient {i} shape {:?} vs {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter {i}"
                )));
            }
        }
        self.step += 1;
        let lr = self.lr * self.schedule.factor(epoch);
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of_f64(self.beta1), T::of_f64(self.beta2));
        let decay = T::of_f64(1.0 - lr * self.weight_decay);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mhat = mv.as_f64() / bc1;
                let vhat = vv.as_f64() / bc2;
                *pv = *pv * decay - T::of_f64(lr * mhat / (vhat.sqrt() + self.eps));
            }
        }
        Ok(())
    }
}
