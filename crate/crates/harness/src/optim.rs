//! AdamW with decoupled weight decay and bias-corrected moments.

use serde::{Deserialize, Serialize};

use pulsebench_model::ParameterStore;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 5e-5, weight_decay: 0.05, beta1: 0.9, beta2: 0.99, epsilon: 1e-8 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(HarnessError::config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, store: &ParameterStore) -> Self {
        let zeros = |p: &pulsebench_model::Param| vec![0.0; p.value.len()];
        Self {
            cfg,
            step: 0,
            m: store.params().iter().map(zeros).collect(),
            v: store.params().iter().map(zeros).collect(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One update of every trainable parameter from its accumulated gradient.
    /// Frozen parameters are left untouched, including by weight decay. A
    /// non-finite gradient aborts before anything is modified.
    pub fn step(&mut self, store: &mut ParameterStore) -> Result<()> {
        if let Some(p) = store
            .params()
            .iter()
            .find(|p| !p.frozen && p.grad.iter().any(|g| !g.is_finite()))
        {
            return Err(HarnessError::Divergence {
                step: self.step + 1,
                what: format!("non-finite gradient in {}", p.name),
            });
        }
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            if p.frozen {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.value.len() {
                let g = p.grad[j];
                let mut w = p.value[j] * (1.0 - c.lr * c.weight_decay);
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                w -= c.lr * mh / (vh.sqrt() + c.epsilon);
                p.value[j] = w as f32 as f64;
            }
        }
        Ok(())
    }
}
