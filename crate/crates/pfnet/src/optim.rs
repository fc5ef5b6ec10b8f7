//! Adam with bias correction, driving a fixed set of named parameters.

use thiserror::Error;

use crate::nn::Param;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("parameter '{0}' has no gradient")]
    MissingGradient(String),
    #[error("optimizer was initialized for {expected} parameters, got {got}")]
    ParamSetChanged { expected: usize, got: usize },
}

/// Per-parameter first/second moment buffers plus the step counter.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: usize,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One update over the full parameter set. Every parameter must carry a
    /// gradient; gradients are cleared afterwards.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<(), OptimError> {
        if self.moments.is_empty() {
            self.moments = params.iter().map(|p| (vec![0.0; p.numel()], vec![0.0; p.numel()])).collect();
        }
        if self.moments.len() != params.len() {
            return Err(OptimError::ParamSetChanged {
                expected: self.moments.len(),
                got: params.len(),
            });
        }
        for p in params.iter() {
            if p.grad.is_none() {
                return Err(OptimError::MissingGradient(p.name.clone()));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (p, (m, v)) in params.iter_mut().zip(&mut self.moments) {
            let g = p.grad.take().expect("checked above");
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
