use serde::{Deserialize, Serialize};

use crate::autodiff::{Element, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Adam with bias correction; weight decay enters as `g + decay·θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub weight_decay: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Element> Adam<T> {
    pub fn new(params: &ParamStore<T>, weight_decay: f64) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.value.numel()]).collect();
        Adam {
            weight_decay: T::from_f64_lossy(weight_decay),
            beta1: T::from_f64_lossy(0.9),
            beta2: T::from_f64_lossy(0.999),
            eps: T::from_f64_lossy(1e-8),
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update from the gradients held in `params`.
    pub fn update(&mut self, params: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::shape(
                "adam_update",
                format!("optimizer tracks {} tensors, store has {}", self.m.len(), params.len()),
            ));
        }
        for (p, m) in params.iter().zip(&self.m) {
            if p.grad.numel() != m.len() || p.value.numel() != m.len() {
                return Err(Error::shape(
                    "adam_update",
                    format!("moment shape differs for `{}`", p.name),
                ));
            }
        }
        self.step += 1;
        let one = T::one();
        let t = self.step as i32;
        let c1 = one - self.beta1.powi(t);
        let c2 = one - self.beta2.powi(t);
        let lr = T::from_f64_lossy(lr);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for i in 0..value.len() {
                let g = grad[i] + self.weight_decay * value[i];
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g * g;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                value[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Moment buffers as named tensors, for checkpoints.
    pub fn state_tensors(&self, params: &ParamStore<T>) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for ((p, m), v) in params.iter().zip(&self.m).zip(&self.v) {
            let shape = p.value.shape().to_vec();
            out.push((
                format!("optim.m.{}", p.name),
                Tensor::new(shape.clone(), m.clone()).expect("sizes match"),
            ));
            out.push((
                format!("optim.v.{}", p.name),
                Tensor::new(shape, v.clone()).expect("sizes match"),
            ));
        }
        out
    }
}

/// Step decay: `base_lr` until `decay_epoch`, `base_lr · decay_factor` after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub total_epochs: usize,
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.base_lr
            )));
        }
        if self.decay_epoch == 0 || self.decay_epoch > self.total_epochs {
            return Err(Error::Config(format!(
                "decay epoch {} must lie in [1, {}]",
                self.decay_epoch, self.total_epochs
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay factor {} outside (0, 1]",
                self.decay_factor
            )));
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::Config(format!(
                "epoch {epoch} outside schedule of {} epochs",
                self.total_epochs
            )));
        }
        Ok(if epoch < self.decay_epoch {
            self.base_lr
        } else {
            self.base_lr * self.decay_factor
        })
    }
}
