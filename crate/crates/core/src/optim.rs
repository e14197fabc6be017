//! AdamW with per-parameter-group learning rates and decay exclusion.
//!
//! Implemented over named `Var`s so the first/second moments can be inspected
//! and checkpointed, and so tests can assert which parameters receive decay.

use std::collections::HashMap;

use candle_core::{backprop::GradStore, Tensor, Var};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Max global gradient norm; `None` disables clipping.
    pub clip_grad_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 1e-5,
            clip_grad_norm: None,
        }
    }
}

struct Slot {
    name: String,
    var: Var,
    m: Tensor,
    v: Tensor,
    /// Learning-rate multiplier of the group this parameter belongs to.
    lr_scale: f64,
    decay: bool,
}

/// One named parameter group: `(name, var, lr_scale, decay)`.
pub type GroupEntry = (String, Var, f64, bool);

pub struct AdamW {
    config: AdamWConfig,
    slots: Vec<Slot>,
    step: usize,
}

impl AdamW {
    pub fn new(entries: Vec<GroupEntry>, config: AdamWConfig) -> Result<Self> {
        let mut slots = Vec::with_capacity(entries.len());
        for (name, var, lr_scale, decay) in entries {
            let m = var.as_tensor().zeros_like()?;
            let v = var.as_tensor().zeros_like()?;
            slots.push(Slot {
                name,
                var,
                m,
                v,
                lr_scale,
                decay,
            });
        }
        Ok(Self {
            config,
            slots,
            step: 0,
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Names of parameters that receive weight decay.
    pub fn decayed_names(&self) -> Vec<String> {
        self.slots
            .iter()
            .filter(|s| s.decay)
            .map(|s| s.name.clone())
            .collect()
    }

    pub fn excluded_names(&self) -> Vec<String> {
        self.slots
            .iter()
            .filter(|s| !s.decay)
            .map(|s| s.name.clone())
            .collect()
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let c = &self.config;
        let bias1 = 1.0 - c.beta1.powf(t);
        let bias2 = 1.0 - c.beta2.powf(t);

        let clip_scale = match c.clip_grad_norm {
            Some(max_norm) => {
                let mut total = 0.0f64;
                for slot in &self.slots {
                    if let Some(g) = grads.get(&slot.var) {
                        total += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
                    }
                }
                let norm = total.sqrt();
                if norm > max_norm {
                    max_norm / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        for slot in &mut self.slots {
            let Some(grad) = grads.get(&slot.var) else {
                continue;
            };
            // detach so moments and params don't retain the autograd graph
            let grad = if clip_scale != 1.0 {
                (grad * clip_scale)?.detach()
            } else {
                grad.detach()
            };
            let lr = c.lr * slot.lr_scale;
            slot.m = ((&slot.m * c.beta1)? + (&grad * (1.0 - c.beta1))?)?.detach();
            slot.v = ((&slot.v * c.beta2)? + (grad.sqr()? * (1.0 - c.beta2))?)?.detach();
            let m_hat = (&slot.m / bias1)?;
            let v_hat = (&slot.v / bias2)?;
            let update = (m_hat / (v_hat.sqrt()? + c.eps)?)?;
            let mut next = (slot.var.as_tensor() - (update * lr)?)?;
            if slot.decay && c.weight_decay > 0.0 {
                next = (next - (slot.var.as_tensor() * (lr * c.weight_decay))?)?;
            }
            slot.var.set(&next.detach())?;
        }
        Ok(())
    }

    /// Moment tensors and step counter, keyed for checkpointing.
    pub fn state(&self) -> (usize, HashMap<String, Tensor>) {
        let mut map = HashMap::new();
        for slot in &self.slots {
            map.insert(format!("m.{}", slot.name), slot.m.clone());
            map.insert(format!("v.{}", slot.name), slot.v.clone());
        }
        (self.step, map)
    }

    pub fn load_state(&mut self, step: usize, state: &HashMap<String, Tensor>) -> Result<()> {
        self.step = step;
        for slot in &mut self.slots {
            let m = state
                .get(&format!("m.{}", slot.name))
                .ok_or_else(|| CoreError::Checkpoint(format!("missing moment m.{}", slot.name)))?;
            let v = state
                .get(&format!("v.{}", slot.name))
                .ok_or_else(|| CoreError::Checkpoint(format!("missing moment v.{}", slot.name)))?;
            slot.m = m.clone();
            slot.v = v.clone();
        }
        Ok(())
    }
}
