//! AdamW with decoupled weight decay and a linear-warmup, cosine-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{GenRecError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay coefficient; the applied shrink per step is `lr · weight_decay`.
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment accumulators for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub hyper: AdamW,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub step: u64,
}

impl OptimState {
    pub fn new(n_params: usize, hyper: AdamW) -> Self {
        Self {
            hyper,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    /// One bias-corrected AdamW update at learning rate `lr`.
    pub fn update(&mut self, params: &mut [f32], grad: &[f32], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(GenRecError::DimensionMismatch {
                expected: self.m.len(),
                got: params.len().min(grad.len()),
            });
        }
        self.step += 1;
        let AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.hyper;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            let g = g as f64;
            let mn = beta1 * *m as f64 + (1.0 - beta1) * g;
            let vn = beta2 * *v as f64 + (1.0 - beta2) * g * g;
            *m = mn as f32;
            *v = vn as f32;
            let step = (mn / c1) / ((vn / c2).sqrt() + eps) + weight_decay * *p as f64;
            *p = (*p as f64 - lr * step) as f32;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub total_steps: u64,
    pub warmup_fraction: f64,
    pub peak_lr: f64,
    pub floor_lr: f64,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(GenRecError::InvalidConfig(format!(
                "warmup_fraction {} must lie in (0, 1)",
                self.warmup_fraction
            )));
        }
        if self.total_steps == 0 || self.peak_lr < 0.0 || self.floor_lr < 0.0 {
            return Err(GenRecError::InvalidConfig("schedule needs steps > 0 and non-negative rates".into()));
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> u64 {
        ((self.warmup_fraction * self.total_steps as f64).ceil() as u64).clamp(1, self.total_steps)
    }

    /// Linear ramp from 0 to `peak_lr` over the warmup steps, then cosine decay to `floor_lr`
    /// at `total_steps`.
    pub fn lr(&self, step: u64) -> f64 {
        let w = self.warmup_steps();
        let step = step.min(self.total_steps);
        if step < w {
            return self.peak_lr * step as f64 / w as f64;
        }
        if self.total_steps == w {
            return self.peak_lr;
        }
        let progress = (step - w) as f64 / (self.total_steps - w) as f64;
        self.floor_lr + 0.5 * (self.peak_lr - self.floor_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
