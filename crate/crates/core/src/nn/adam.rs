use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

pub const DEFAULT_LR: f64 = 0.001;

/// Adam with bias correction. Moments are allocated lazily on the first
/// step and must keep matching parameter shapes afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(DEFAULT_LR)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first, &self.second)
    }

    /// Zeroes moments and the step counter; hyper-parameters are kept.
    pub fn reset(&mut self) {
        self.step = 0;
        self.first.clear();
        self.second.clear();
    }

    fn check(&self, index: usize, param: &Tensor, grad: &Tensor) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::shape(format!(
                "parameter {index} has shape {:?} but gradient {:?}",
                param.shape(),
                grad.shape()
            )));
        }
        if let Some(m) = self.first.get(index) {
            if m.shape() != param.shape() {
                return Err(Error::shape(format!(
                    "parameter {index} changed shape from {:?} to {:?}",
                    m.shape(),
                    param.shape()
                )));
            }
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {index}")));
        }
        Ok(())
    }

    fn update(&mut self, index: usize, param: &mut Tensor, grad: &Tensor) {
        if index == self.first.len() {
            self.first.push(Tensor::zeros(param.shape()));
            self.second.push(Tensor::zeros(param.shape()));
        }
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        let (b1, b2) = (self.beta1, self.beta2);
        let m = self.first[index].data_mut();
        let v = self.second[index].data_mut();
        for (((p, g), m), v) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (math::sqrt(v_hat) + self.eps);
        }
    }

    /// One update over explicit `(param, grad)` lists.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if !self.first.is_empty() && self.first.len() != params.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            self.check(i, p, g)?;
        }
        self.step += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.update(i, p, g);
        }
        Ok(())
    }

    /// One update over every parameter of `modules`, in visiting order.
    pub fn step_modules(&mut self, modules: &mut [&mut dyn Parameters]) -> Result<()> {
        let mut count = 0;
        let mut failure = None;
        for m in modules.iter_mut() {
            m.visit_params(&mut |p, g| {
                if failure.is_none() {
                    failure = self.check(count, p, g).err();
                }
                count += 1;
            });
        }
        if let Some(e) = failure {
            return Err(e);
        }
        if !self.first.is_empty() && self.first.len() != count {
            return Err(Error::shape(format!(
                "optimizer tracks {} parameters, got {count}",
                self.first.len()
            )));
        }
        self.step += 1;
        let mut index = 0;
        for m in modules.iter_mut() {
            m.visit_params(&mut |p, g| {
                self.update(index, p, g);
                index += 1;
            });
        }
        Ok(())
    }
}
