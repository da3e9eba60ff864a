//! Adam with bias-corrected moment estimates.
//!
//! ```text
//! m_t = β₁·m_{t−1} + (1 − β₁)·g
//! v_t = β₂·v_{t−1} + (1 − β₂)·g²
//! θ_t = θ_{t−1} − α·(m_t / (1 − β₁ᵗ)) / (sqrt(v_t / (1 − β₂ᵗ)) + ε)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    /// Zeroed moments mirroring the given parameter shapes.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>, config: AdamConfig) -> Self {
        let m: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        Self {
            config,
            t: 0,
            v: m.clone(),
            m,
        }
    }

    /// One update of every parameter from its gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "adam tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != m.shape() || g.shape() != m.shape() {
                return Err(Error::Shape {
                    expected: m.shape().to_vec(),
                    found: if p.shape() != m.shape() {
                        p.shape()
                    } else {
                        g.shape()
                    }
                    .to_vec(),
                });
            }
        }
        self.t += 1;
        let AdamConfig {
            alpha,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            for (((theta, &gi), mi), vi) in pd
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *theta -= alpha * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
