use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Step-decay learning-rate schedule: `initial · factor^(epoch / every)`,
/// floored at `min_lr`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub initial: f64,
    pub factor: f64,
    pub every: usize,
    pub min_lr: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 0.1,
            factor: 0.1,
            every: 10,
            min_lr: 1e-6,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        let decays = (epoch / self.every.max(1)) as i32;
        (self.initial * self.factor.powi(decays)).max(self.min_lr)
    }
}

/// Learning rate for `epoch` under the default schedule.
pub fn lr_schedule(epoch: usize) -> f64 {
    LrSchedule::default().lr(epoch)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a fixed list of parameters.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
    lr: f64,
}

impl OptimizerState {
    pub fn new(params: &[Tensor], lr: f64, config: AdamConfig) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        Ok(Self {
            config,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
            lr,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        self.lr = lr;
        Ok(())
    }

    /// One bias-corrected Adam update. `names` label parameters in errors.
    pub fn adam_step(
        &mut self,
        params: &mut [Tensor],
        grads: &[Tensor],
        names: &[String],
    ) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::LengthMismatch(format!(
                "{} parameters, {} gradients, {} moments",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                let name = names.get(i).cloned().unwrap_or_else(|| i.to_string());
                return Err(Error::NanGradient(name));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for j in 0..pd.len() {
                md[j] = beta1 * md[j] + (1.0 - beta1) * gd[j];
                vd[j] = beta2 * vd[j] + (1.0 - beta2) * gd[j] * gd[j];
                let mhat = md[j] / bc1;
                let vhat = vd[j] / bc2;
                pd[j] -= self.lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
