use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{CpicError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction over every trainable entry of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || store.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(CpicError::shape(
                "Adam moment buffers",
                store.len(),
                self.m.len(),
            ));
        }
        for p in store.params() {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(CpicError::NonFiniteGradient {
                    param: p.name.clone(),
                    step: self.step + 1,
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            if !store.param(id).trainable {
                continue;
            }
            let grad = store.grad(id).to_vec();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let value = store.value_mut(id);
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        store.zero_grads();
        Ok(())
    }
}
