//! Adam with decoupled weight decay.
//!
//! Update per step t (element-wise):
//!   m <- b1 m + (1-b1) g            v <- b2 v + (1-b2) g^2
//!   mhat = m / (1 - b1^t)           vhat = v / (1 - b2^t)
//!   theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta
//!
//! The decay term uses the pre-update theta and does not pass through the
//! moment estimates.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state over a fixed list of named parameters.
pub struct Adam<T: Scalar> {
    pub config: AdamConfig,
    /// When set, a non-finite gradient aborts the step with an error.
    pub strict: bool,
    params: Vec<(String, Tensor<T>)>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step_count: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: Vec<(String, Tensor<T>)>, config: AdamConfig) -> Self {
        let m = params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect();
        let v = params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect();
        Adam {
            config,
            strict: false,
            params,
            m,
            v,
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn zero_grads(&self) {
        for (_, p) in &self.params {
            p.zero_grad();
        }
    }

    /// Apply one update from the gradients accumulated on the parameters.
    /// Parameters with no gradient buffer are treated as zero-gradient.
    pub fn step(&mut self) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count;
        let c = &self.config;
        let lr = T::from_f64_c(c.learning_rate);
        let b1 = T::from_f64_c(c.beta1);
        let b2 = T::from_f64_c(c.beta2);
        let eps = T::from_f64_c(c.epsilon);
        let wd = T::from_f64_c(c.weight_decay);
        let corr1 = T::from_f64_c(1.0 - c.beta1.powi(t as i32));
        let corr2 = T::from_f64_c(1.0 - c.beta2.powi(t as i32));

        for (idx, (name, p)) in self.params.iter().enumerate() {
            let grad = p.grad().unwrap_or_else(|| vec![T::zero(); p.numel()]);
            if grad.len() != p.numel() {
                return Err(Error::shape(
                    "adam_step",
                    format!("gradient length {} != parameter {}", grad.len(), p.numel()),
                ));
            }
            if self.strict && !grad.iter().all(|g| g.is_finite()) {
                return Err(Error::NonFiniteGrad { name: name.clone() });
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let mut theta = p.to_vec();
            for i in 0..theta.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mhat = m[i] / corr1;
                let vhat = v[i] / corr2;
                theta[i] = theta[i] - lr * mhat / (vhat.sqrt() + eps) - lr * wd * theta[i];
            }
            p.set_data(&theta);
        }
        Ok(())
    }

    /// Flat views of the optimizer state for checkpointing.
    pub fn state_tensors(&self) -> Vec<(String, Vec<T>, Vec<usize>)> {
        let mut out = Vec::new();
        for (idx, (name, p)) in self.params.iter().enumerate() {
            out.push((format!("optim.m.{name}"), self.m[idx].clone(), p.shape().to_vec()));
            out.push((format!("optim.v.{name}"), self.v[idx].clone(), p.shape().to_vec()));
        }
        out
    }

    pub fn restore_state(
        &mut self,
        step_count: u64,
        mut lookup: impl FnMut(&str) -> Option<Vec<T>>,
    ) -> Result<()> {
        for (idx, (name, p)) in self.params.iter().enumerate() {
            let m = lookup(&format!("optim.m.{name}"))
                .ok_or_else(|| Error::invalid("adam_restore", format!("missing moment for {name}")))?;
            let v = lookup(&format!("optim.v.{name}"))
                .ok_or_else(|| Error::invalid("adam_restore", format!("missing variance for {name}")))?;
            if m.len() != p.numel() || v.len() != p.numel() {
                return Err(Error::shape(
                    "adam_restore",
                    format!("state size mismatch for {name}"),
                ));
            }
            self.m[idx] = m;
            self.v[idx] = v;
        }
        self.step_count = step_count;
        Ok(())
    }
}
