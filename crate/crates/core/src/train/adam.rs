//! Adam with bias correction.
//!
//! Dense tensors follow the standard update. The hash table is updated
//! lazily: only slots with a gradient in the current step have their
//! moments advanced, using the global step for bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradients, Model, Params};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    /// Update for one scalar at step `t` (1-based), advancing its moments.
    #[inline]
    pub fn update(&self, t: u64, g: f64, m: &mut f64, v: &mut f64) -> f64 {
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        let m_hat = *m / (1.0 - self.beta1.powi(t as i32));
        let v_hat = *v / (1.0 - self.beta2.powi(t as i32));
        -self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon)
    }
}

/// Applies one Adam step to a flat tensor.
pub fn adam_step(config: &AdamConfig, t: u64, params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64]) {
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *p += config.update(t, g, m, v);
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Params,
    v: Params,
    hash_m: Vec<f64>,
    hash_v: Vec<f64>,
}

impl Adam {
    pub fn new(model: &Model, config: AdamConfig) -> Self {
        let slots = model.hash.as_ref().map_or(0, |h| h.table.values.len());
        Self {
            config,
            step: 0,
            m: model.params.zeros_like(),
            v: model.params.zeros_like(),
            hash_m: vec![0.0; slots],
            hash_v: vec![0.0; slots],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. A non-finite gradient aborts before anything changes.
    pub fn step(&mut self, model: &mut Model, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.params.tensors() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(name));
            }
        }
        if grads.hash.values().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("H".into()));
        }
        self.step += 1;
        let t = self.step;
        let cfg = self.config;
        let params = model.params.tensors_mut();
        let grads_t = grads.params.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for ((((_, p), (_, g)), (_, m)), (_, v)) in params.into_iter().zip(grads_t).zip(ms).zip(vs) {
            adam_step(&cfg, t, p, g, m, v);
        }
        if let Some(hb) = model.hash.as_mut() {
            for (&idx, &g) in &grads.hash {
                hb.table.values[idx] += cfg.update(t, g, &mut self.hash_m[idx], &mut self.hash_v[idx]);
            }
        }
        Ok(())
    }
}
