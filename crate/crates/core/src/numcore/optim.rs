//! AdamW with global-norm clipping and linear warmup.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::nn::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    /// Updates over which the rate ramps linearly up from zero.
    pub warmup_steps: usize,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: 1.0,
            warmup_steps: 100,
        }
    }
}

impl AdamWConfig {
    /// Rate used by update number `step` (1-based): `lr * min(1, step / warmup)`.
    pub fn rate_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps as u64 {
            self.learning_rate
        } else {
            self.learning_rate * step as f64 / self.warmup_steps as f64
        }
    }
}

/// Moment buffers and step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

/// What one update did.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub learning_rate: f64,
    /// Global norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// `sqrt(sum of squares)` over every gradient entry.
pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        if config.clip_norm.is_nan() || config.clip_norm <= 0.0 {
            return Err(Error::InvalidArgument("clip norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(Error::InvalidArgument("betas must lie in [0, 1)".into()));
        }
        Ok(Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.second.get(name)
    }

    /// Applies one update to every parameter named in `grads`; parameters
    /// without a gradient entry are left untouched.
    ///
    /// Decay is decoupled and applied before the moment step:
    /// `p <- p (1 - lr wd)`, then `p <- p - lr m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<StepStats> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "optimizer_step",
                    format!("{name}: parameter {:?}, gradient {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        let grad_norm = global_norm(grads);
        let clipped = grad_norm > self.config.clip_norm;
        let scale = if clipped {
            self.config.clip_norm / grad_norm
        } else {
            1.0
        };

        self.step += 1;
        let t = self.step as i32;
        let lr = self.config.rate_at(self.step);
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.config;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);

        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let [r, c] = p.shape();
            let m = self.first.entry(name.clone()).or_insert_with(|| Tensor::zeros(r, c));
            let v = self.second.entry(name.clone()).or_insert_with(|| Tensor::zeros(r, c));
            let decay = 1.0 - lr * weight_decay;
            for (((pv, mv), vv), &gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                let gv = gv * scale;
                *pv *= decay;
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(StepStats {
            step: self.step,
            learning_rate: lr,
            grad_norm,
            clipped,
        })
    }
}
