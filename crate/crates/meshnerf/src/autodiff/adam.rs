//! Bias-corrected Adam over parameter groups.

use super::matrix::Matrix;
use super::tape::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// First/second moment per parameter, allocated on first touch.
    m: Vec<Option<Matrix>>,
    v: Vec<Option<Matrix>>,
    /// Per-parameter step counts; frozen groups keep warming up correctly
    /// when they rejoin.
    steps: Vec<u64>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Adam {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            steps: Vec::new(),
        }
    }

    fn ensure_slots(&mut self, store: &ParamStore) {
        while self.m.len() < store.params.len() {
            self.m.push(None);
            self.v.push(None);
            self.steps.push(0);
        }
    }

    pub fn step_count(&self, id: ParamId) -> u64 {
        self.steps.get(id).copied().unwrap_or(0)
    }

    /// One update over the listed parameters using their accumulated grads.
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) -> Result<()> {
        if !store.grads_ready() {
            return Err(Error::Optimizer(
                "no gradients: run backward before stepping".into(),
            ));
        }
        self.ensure_slots(store);
        for &id in ids {
            let param = &mut store.params[id];
            let m = self.m[id].get_or_insert_with(|| Matrix::zeros(param.value.rows, param.value.cols));
            let v = self.v[id].get_or_insert_with(|| Matrix::zeros(param.value.rows, param.value.cols));
            self.steps[id] += 1;
            let t = self.steps[id];
            let bc1 = 1.0 - self.beta1.powi(t as i32);
            let bc2 = 1.0 - self.beta2.powi(t as i32);
            for i in 0..param.value.data.len() {
                let g = param.grad.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * g;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                param.value.data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
