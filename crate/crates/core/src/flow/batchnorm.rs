use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::Direction;
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-dimension affine normalization with running statistics.
///
/// `momentum` is the weight given to the newest batch:
/// `mean ← (1 − momentum)·mean + momentum·batch_mean`, and likewise for
/// the standard deviation. The first batch sets the statistics outright.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertibleBatchNorm {
    mean: Vec<f64>,
    std: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    initialized: bool,
    /// Per-dimension `1 / sqrt(var + eps)` of the last training pass.
    #[serde(skip)]
    train_scale: Option<Vec<f64>>,
}

impl InvertibleBatchNorm {
    pub fn new(width: usize, momentum: f64, eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::config(format!("batch-norm momentum {momentum} not in [0, 1]")));
        }
        if eps <= 0.0 {
            return Err(Error::config("batch-norm eps must be positive"));
        }
        Ok(Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
            momentum,
            eps,
            initialized: false,
            train_scale: None,
        })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    /// Overrides the running statistics with the given mean and variance.
    pub fn set_statistics(&mut self, mean: &[f64], var: &[f64]) -> Result<()> {
        if mean.len() != self.width() || var.len() != self.width() {
            return Err(Error::shape("statistics width differs from layer width"));
        }
        if var.iter().any(|v| *v < 0.0 || !(v + self.eps > 0.0)) {
            return Err(Error::config("variance must be non-negative"));
        }
        self.mean = mean.to_vec();
        self.std = var.iter().map(|v| math::sqrt(*v)).collect();
        self.initialized = true;
        Ok(())
    }

    fn running_var_eps(&self) -> impl Iterator<Item = f64> + '_ {
        self.std.iter().map(move |s| s * s + self.eps)
    }

    /// Per-sample log-determinant of the normalizing map under running statistics.
    pub fn running_logdet(&self) -> f64 {
        -0.5 * self.running_var_eps().map(math::log).sum::<f64>()
    }

    fn require_initialized(&self) -> Result<()> {
        if !self.initialized {
            return Err(Error::state(
                "batch norm used in evaluation mode before any training batch",
            ));
        }
        Ok(())
    }

    fn check_width(&self, u: &Tensor) -> Result<()> {
        if u.row_len() != self.width() {
            return Err(Error::shape(format!(
                "batch norm of width {} got rows of width {}",
                self.width(),
                u.row_len()
            )));
        }
        Ok(())
    }

    /// Evaluation-mode map using running statistics. Returns the output and
    /// the per-sample log-determinant (identical for every sample).
    pub fn apply(&self, u: &Tensor, direction: Direction) -> Result<(Tensor, f64)> {
        self.require_initialized()?;
        self.check_width(u)?;
        let sd: Vec<f64> = self.running_var_eps().map(math::sqrt).collect();
        let mut out = u.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for j in 0..row.len() {
                row[j] = match direction {
                    Direction::Normalizing => (row[j] - self.mean[j]) / sd[j],
                    Direction::Generating => row[j] * sd[j] + self.mean[j],
                };
            }
        }
        let ld = self.running_logdet();
        Ok((
            out,
            match direction {
                Direction::Normalizing => ld,
                Direction::Generating => -ld,
            },
        ))
    }

    /// Training-mode normalizing pass: normalizes with the batch statistics,
    /// then folds them into the running statistics. Batch statistics are
    /// treated as constants by [`InvertibleBatchNorm::backward`].
    pub fn forward_train(&mut self, u: &Tensor) -> Result<(Tensor, f64)> {
        self.check_width(u)?;
        let n = u.rows();
        if n < 2 {
            return Err(Error::config(
                "batch norm needs at least two samples in training mode",
            ));
        }
        let d = self.width();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(u.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(u.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let scale: Vec<f64> = var.iter().map(|v| 1.0 / math::sqrt(v + self.eps)).collect();
        let mut out = u.clone();
        for i in 0..n {
            let row = out.row_mut(i);
            for j in 0..d {
                row[j] = (row[j] - mean[j]) * scale[j];
            }
        }
        let logdet: f64 = scale.iter().map(|s| math::log(*s)).sum();

        let std: Vec<f64> = var.iter().map(|v| math::sqrt(*v)).collect();
        if self.initialized {
            let a = self.momentum;
            for j in 0..d {
                self.mean[j] = (1.0 - a) * self.mean[j] + a * mean[j];
                self.std[j] = (1.0 - a) * self.std[j] + a * std[j];
            }
        } else {
            self.mean = mean;
            self.std = std;
            self.initialized = true;
        }
        self.train_scale = Some(scale);
        Ok((out, logdet))
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let scale = self
            .train_scale
            .take()
            .ok_or_else(|| Error::state("batch norm backward without a training pass"))?;
        let mut g = grad.clone();
        for i in 0..g.rows() {
            for (v, s) in g.row_mut(i).iter_mut().zip(&scale) {
                *v *= s;
            }
        }
        Ok(g)
    }
}
