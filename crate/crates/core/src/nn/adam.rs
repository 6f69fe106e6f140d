use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::network::Grads;
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam with per-parameter moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        Adam {
            config,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros_like(p)).collect(),
            second: params.iter().map(|p| Tensor::zeros_like(p)).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &Grads) -> Result<()> {
        if params.len() != self.first.len() || grads.0.len() != self.first.len() {
            return Err(Error::shape(
                "adam parameter list",
                &[self.first.len()],
                &[params.len(), grads.0.len()],
            ));
        }
        for ((p, g), m) in params.iter().zip(&grads.0).zip(&self.first) {
            if p.shape() != m.shape() || g.shape() != m.shape() {
                return Err(Error::shape("adam tensor", m.shape(), g.shape()));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(&grads.0)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_on_fresh_state_is_identity() {
        let mut p = Tensor::from_vec(vec![0.3, -1.2]);
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        adam.step(vec![&mut p], &Grads(vec![Tensor::zeros(&[2])])).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig::default();
        let mut p = Tensor::from_vec(vec![0.0]);
        let mut adam = Adam::new(cfg, &[&p]);
        adam.step(vec![&mut p], &Grads(vec![Tensor::from_vec(vec![1.0])])).unwrap();
        // t = 1: m_hat = 1, v_hat = 1
        let expected = -cfg.learning_rate / (1.0 + cfg.epsilon);
        assert!((p.data()[0] - expected).abs() <= 1e-12);
    }

    #[test]
    fn identical_runs_are_identical() {
        let run = || {
            let mut p = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
            let mut adam = Adam::new(AdamConfig { learning_rate: 0.01, ..Default::default() }, &[&p]);
            for k in 0..50 {
                let g = Tensor::from_vec(vec![(k as f64).sin(), 0.5, -(k as f64).cos()]);
                adam.step(vec![&mut p], &Grads(vec![g])).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Tensor::from_vec(vec![0.0, 0.0]);
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        let r = adam.step(vec![&mut p], &Grads(vec![Tensor::zeros(&[3])]));
        assert!(matches!(r, Err(Error::ShapeMismatch { .. })));
    }
}
