use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::param::{ParamId, Parameter};
use crate::error::{contract, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment buffers for one group of parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<ParamId, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Resets the gradients of `params`, loads `grads` into them, steps and
    /// resets again. Parameters without an entry in `grads` see a zero
    /// gradient (their moments still decay).
    pub fn apply(&mut self, grads: &super::Gradients, mut params: Vec<&mut Parameter>) -> Result<()> {
        for p in params.iter_mut() {
            p.zero_grad();
            if let Some(g) = grads.get(p.id) {
                p.grad.add_assign(g);
            }
        }
        self.step(params.iter_mut().map(|p| &mut **p).collect())?;
        for p in params {
            p.zero_grad();
        }
        Ok(())
    }

    /// Applies one bias-corrected Adam update from the accumulated gradients.
    /// Gradients are left in place; callers reset them.
    pub fn step(&mut self, params: Vec<&mut Parameter>) -> Result<()> {
        for p in &params {
            if p.grad.shape() != p.value.shape() {
                return Err(contract(format!("gradient shape mismatch for {}", p.name)));
            }
            if let Some((m, _)) = self.moments.get(&p.id) {
                if m.shape() != p.value.shape() {
                    return Err(contract(format!("moment shape mismatch for {}", p.name)));
                }
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for p in params {
            if p.frozen {
                continue;
            }
            let (m, v) = self.moments.entry(p.id).or_insert_with(|| {
                (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape()))
            });
            let g = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * g[i];
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
