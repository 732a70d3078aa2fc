//! Adam optimizer with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Parameter;

/// Adam hyperparameters. Defaults: lr 1e-3, β₁ 0.9, β₂ 0.999, ε 1e-8.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.epsilon <= 0.0
        {
            return Err(Error::InvalidArgument(format!(
                "bad Adam hyperparameters: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-parameter first/second moment state plus the shared step counter.
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    /// Sets up zeroed moment slots matching `params` (by position).
    pub fn new(cfg: AdamConfig, params: &[Parameter]) -> Self {
        let moments = params
            .iter()
            .map(|p| (vec![0.0; p.value.len()], vec![0.0; p.value.len()]))
            .collect();
        Adam {
            cfg,
            step: 0,
            moments,
        }
    }

    /// Applies one update from the gradients currently held in `params`.
    /// Gradients are left untouched; zeroing them is the caller's move.
    pub fn step(&mut self, params: &mut [Parameter]) {
        debug_assert_eq!(params.len(), self.moments.len());
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        for (p, (m, v)) in params.iter_mut().zip(&mut self.moments) {
            let grads = p.grad.data();
            for ((w, g), (mi, vi)) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grads)
                .map(|(w, g)| (w, *g))
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.cfg.beta1 * *mi + (1.0 - self.cfg.beta1) * g;
                *vi = self.cfg.beta2 * *vi + (1.0 - self.cfg.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= self.cfg.learning_rate * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
            }
        }
    }
}
