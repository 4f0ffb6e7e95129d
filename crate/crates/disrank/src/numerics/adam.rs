//! Adam optimizer with bias correction.

use super::tape::{Tape, TensorId};
use super::{NumericsError, Result};

/// Adam state for a fixed list of parameters.
///
/// First and second moment estimates are kept per parameter slot, keyed by
/// position in the slice passed to `step`. Callers must pass the parameters
/// in the same order every step.
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    /// Standard defaults: beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(lr: f32) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply one update to every listed parameter, then zero their gradients.
    ///
    /// Errors if any parameter is missing a gradient (backward not run) or
    /// changed size since the previous step.
    pub fn step(&mut self, tape: &mut Tape, params: &[TensorId]) -> Result<()> {
        if self.m.is_empty() {
            for &p in params {
                let n = tape.data(p).len();
                self.m.push(vec![0.0; n]);
                self.v.push(vec![0.0; n]);
            }
        }
        if self.m.len() != params.len() {
            return Err(NumericsError::StateSizeMismatch { index: params.len() });
        }
        for (index, &p) in params.iter().enumerate() {
            if tape.grad(p).is_none() {
                return Err(NumericsError::MissingGrad { index });
            }
            if tape.grad(p).unwrap().len() != self.m[index].len() {
                return Err(NumericsError::StateSizeMismatch { index });
            }
        }
        self.t += 1;
        let bc1 = 1.0 - (self.beta1 as f64).powi(self.t as i32);
        let bc2 = 1.0 - (self.beta2 as f64).powi(self.t as i32);
        let lr_t = self.lr as f64 * bc2.sqrt() / bc1;
        let lr_t = lr_t as f32;
        for (index, &p) in params.iter().enumerate() {
            let grad = tape.grad(p).unwrap().to_vec();
            let m = &mut self.m[index];
            let v = &mut self.v[index];
            let data = tape.data_mut(p);
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                data[i] -= lr_t * m[i] / (v[i].sqrt() + self.eps);
            }
            tape.zero_grad(p);
        }
        Ok(())
    }
}
