use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Bias-corrected Adam optimizer state for a fixed set of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self {
            step_count: 0,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn num_params(&self) -> usize {
        self.first_moment.len()
    }

    /// Clears both moments and the step counter, keeping hyperparameters.
    pub fn reset(&mut self) {
        self.step_count = 0;
        self.first_moment.iter_mut().for_each(|m| *m = 0.0);
        self.second_moment.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.step_groups(&mut [params], &[grads])
    }

    /// One update over several parameter slices that together make up the
    /// tracked parameter vector, in a fixed order.
    pub fn step_groups(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("adam parameter groups", params.len(), grads.len()));
        }
        let mut total = 0;
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::shape("adam group", p.len(), g.len()));
            }
            total += p.len();
        }
        if total != self.num_params() {
            return Err(Error::shape("adam parameter count", self.num_params(), total));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, f64::from(t));
        let bc2 = 1.0 - libm::pow(self.beta2, f64::from(t));
        let mut offset = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            let m = &mut self.first_moment[offset..offset + p.len()];
            let v = &mut self.second_moment[offset..offset + p.len()];
            for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m).zip(v) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= self.learning_rate * m_hat / (libm::sqrt(v_hat) + self.epsilon);
            }
            offset += p.len();
        }
        Ok(())
    }
}
