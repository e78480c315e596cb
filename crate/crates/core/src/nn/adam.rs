//! Adam optimizer with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::layers::Parameters;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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
    /// A zero learning rate is accepted and turns every step into a no-op.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::validation(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::validation("Adam epsilon must be positive"));
        }
        Ok(())
    }
}

pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new<P: Parameters>(config: AdamConfig, model: &P) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Matrix> = model
            .named_params()
            .iter()
            .map(|(_, p)| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Ok(Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update using `grad`, a same-shaped gradient container.
    pub fn update<P: Parameters>(&mut self, model: &mut P, grad: &P) {
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let grads = grad.named_params();
        for (i, p) in model.params_mut().into_iter().enumerate() {
            let g = grads[i].1.as_slice();
            let m = self.m[i].as_mut_slice();
            let v = self.v[i].as_mut_slice();
            for (j, w) in p.as_mut_slice().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Dense;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = Dense::new(2, 2, &mut rng);
        let before = layer.clone();
        let mut grad = layer.clone();
        grad.w.fill(3.0);
        grad.b.fill(-0.5);
        let mut adam = Adam::new(AdamConfig::default(), &layer).unwrap();
        adam.update(&mut layer, &grad);
        // bias-corrected first step is lr · sign(g)
        for (a, b) in layer.w.as_slice().iter().zip(before.w.as_slice()) {
            assert!((b - a - 1e-3).abs() < 1e-9);
        }
        for (a, b) in layer.b.as_slice().iter().zip(before.b.as_slice()) {
            assert!((a - b - 1e-3).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_negative_learning_rate() {
        let cfg = AdamConfig {
            learning_rate: -1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let zero = AdamConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(zero.validate().is_ok());
    }
}
