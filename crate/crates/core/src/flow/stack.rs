use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::batchnorm::{InvertibleBatchNorm, DEFAULT_EPS, DEFAULT_MOMENTUM};
use super::coupling::CouplingLayer;
use super::permutation::Permutation;
use super::Direction;
use crate::error::{Error, Result};
use crate::math;
use crate::nn::Parameters;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Embedding width `d`.
    pub dim: usize,
    pub levels: usize,
    pub blocks: usize,
    /// Conditioner hidden width as a multiple of the level width.
    pub hidden_multiplier: usize,
    /// One-hot width for class conditioning; 0 disables conditioning.
    pub cond_width: usize,
    pub log_scale_bound: Option<f64>,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl FlowConfig {
    pub fn new(dim: usize, levels: usize, blocks: usize) -> Self {
        Self {
            dim,
            levels,
            blocks,
            hidden_multiplier: 2,
            cond_width: 0,
            log_scale_bound: Some(2.0),
            bn_momentum: DEFAULT_MOMENTUM,
            bn_eps: DEFAULT_EPS,
        }
    }

    pub fn conditioned(mut self, classes: usize) -> Self {
        self.cond_width = classes;
        self
    }
}

/// Widths entering each level: each non-final level emits the first
/// `⌊w/2⌋` columns and forwards the remaining `⌈w/2⌉`.
pub fn level_widths(dim: usize, levels: usize) -> Vec<usize> {
    let mut widths = Vec::with_capacity(levels);
    let mut w = dim;
    for _ in 0..levels {
        widths.push(w);
        w -= w / 2;
    }
    widths
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FlowLayer {
    Permutation(Permutation),
    BatchNorm(InvertibleBatchNorm),
    Coupling(CouplingLayer),
}

impl FlowLayer {
    fn width(&self) -> usize {
        match self {
            FlowLayer::Permutation(p) => p.width(),
            FlowLayer::BatchNorm(b) => b.width(),
            FlowLayer::Coupling(c) => c.width(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    width: usize,
    /// Columns sent straight to the output at the end of this level.
    emit: usize,
    layers: Vec<FlowLayer>,
}

impl Level {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn emitted(&self) -> usize {
        self.emit
    }

    pub fn layers(&self) -> &[FlowLayer] {
        &self.layers
    }
}

/// Multi-scale normalizing flow. "Normalizing" maps embeddings to the
/// standard-normal prior; "generating" maps prior samples to embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowStack {
    dim: usize,
    cond_width: usize,
    levels: Vec<Level>,
}

fn layer_context(level: usize, layer: usize, e: Error) -> Error {
    match e {
        Error::Divergence(msg) => Error::Divergence(format!("level {level} layer {layer}: {msg}")),
        Error::NonFinite(msg) => Error::Divergence(format!("level {level} layer {layer}: {msg}")),
        other => other,
    }
}

impl FlowStack {
    /// Builds `levels × blocks` blocks of permutation → batch norm → coupling.
    /// Only the first coupling layer sees the class condition.
    pub fn new(cfg: &FlowConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.levels == 0 || cfg.blocks == 0 {
            return Err(Error::config("flow needs at least one level and one block"));
        }
        let widths = level_widths(cfg.dim, cfg.levels);
        if widths.iter().any(|w| *w < 2) {
            return Err(Error::config(format!(
                "{} levels leave fewer than 2 dimensions for the last level of a {}-wide flow",
                cfg.levels, cfg.dim
            )));
        }
        let mut levels = Vec::with_capacity(cfg.levels);
        let mut first_coupling = true;
        for &w in &widths {
            let mut layers = Vec::with_capacity(3 * cfg.blocks);
            for _ in 0..cfg.blocks {
                layers.push(FlowLayer::Permutation(Permutation::random(w, rng)));
                layers.push(FlowLayer::BatchNorm(InvertibleBatchNorm::new(
                    w,
                    cfg.bn_momentum,
                    cfg.bn_eps,
                )?));
                let cond = if first_coupling { cfg.cond_width } else { 0 };
                first_coupling = false;
                layers.push(FlowLayer::Coupling(CouplingLayer::new(
                    w,
                    cfg.hidden_multiplier * w,
                    cond,
                    cfg.log_scale_bound,
                    rng,
                )?));
            }
            levels.push(layers);
        }
        Self::from_levels(cfg.dim, cfg.cond_width, levels)
    }

    /// Assembles a stack from explicit per-level layer lists.
    pub fn from_levels(dim: usize, cond_width: usize, levels: Vec<Vec<FlowLayer>>) -> Result<Self> {
        let widths = level_widths(dim, levels.len());
        let count = levels.len();
        let mut out = Vec::with_capacity(count);
        for (l, (layers, w)) in levels.into_iter().zip(widths).enumerate() {
            if let Some(bad) = layers.iter().position(|x| x.width() != w) {
                return Err(Error::config(format!(
                    "level {l} layer {bad} has width {} but the level is {w} wide",
                    layers[bad].width()
                )));
            }
            for layer in &layers {
                if let FlowLayer::Coupling(c) = layer {
                    if c.is_conditioned() && c.condition_width() != cond_width {
                        return Err(Error::config("coupling condition width differs from the stack"));
                    }
                }
            }
            let emit = if l + 1 == count { w } else { w / 2 };
            out.push(Level {
                width: w,
                emit,
                layers,
            });
        }
        Ok(Self {
            dim,
            cond_width,
            levels: out,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn condition_width(&self) -> usize {
        self.cond_width
    }

    pub fn is_conditioned(&self) -> bool {
        self.couplings().any(CouplingLayer::is_conditioned)
    }

    fn couplings(&self) -> impl Iterator<Item = &CouplingLayer> {
        self.levels.iter().flat_map(|l| {
            l.layers.iter().filter_map(|x| match x {
                FlowLayer::Coupling(c) => Some(c),
                _ => None,
            })
        })
    }

    pub fn is_initialized(&self) -> bool {
        self.levels.iter().all(|l| {
            l.layers.iter().all(|x| match x {
                FlowLayer::BatchNorm(b) => b.is_initialized(),
                _ => true,
            })
        })
    }

    pub fn layers_mut(&mut self, level: usize) -> &mut [FlowLayer] {
        &mut self.levels[level].layers
    }

    fn check_input(&self, z: &Tensor, cond: Option<&Tensor>) -> Result<()> {
        if z.shape().len() != 2 || z.row_len() != self.dim {
            return Err(Error::shape(format!(
                "flow of width {} got {:?}",
                self.dim,
                z.shape()
            )));
        }
        if self.is_conditioned() {
            let c = cond.ok_or_else(|| Error::config("conditioned flow needs a class vector"))?;
            if c.rows() != z.rows() || c.row_len() != self.cond_width {
                return Err(Error::shape(format!(
                    "condition {:?} for {} samples of a {}-class flow",
                    c.shape(),
                    z.rows(),
                    self.cond_width
                )));
            }
        }
        Ok(())
    }

    fn apply_layer(
        layer: &FlowLayer,
        x: &Tensor,
        cond: Option<&Tensor>,
        direction: Direction,
        logdet: &mut [f64],
    ) -> Result<Tensor> {
        match layer {
            FlowLayer::Permutation(p) => Ok(match direction {
                Direction::Normalizing => p.apply(x),
                Direction::Generating => p.invert(x),
            }),
            FlowLayer::BatchNorm(b) => {
                let (y, ld) = b.apply(x, direction)?;
                logdet.iter_mut().for_each(|v| *v += ld);
                Ok(y)
            }
            FlowLayer::Coupling(c) => {
                let (y, ld) = c.apply(x, cond, direction)?;
                logdet.iter_mut().zip(ld).for_each(|(v, d)| *v += d);
                Ok(y)
            }
        }
    }

    /// Normalizing pass under running statistics: returns the prior-space
    /// vector `u` (all emitted chunks, in level order) and per-sample log-det.
    pub fn normalize(&self, z: &Tensor, cond: Option<&Tensor>) -> Result<(Tensor, Vec<f64>)> {
        self.check_input(z, cond)?;
        let n = z.rows();
        let mut logdet = vec![0.0; n];
        let mut x = z.clone();
        let mut u: Option<Tensor> = None;
        for (l, level) in self.levels.iter().enumerate() {
            for (i, layer) in level.layers.iter().enumerate() {
                x = Self::apply_layer(layer, &x, cond, Direction::Normalizing, &mut logdet)
                    .map_err(|e| layer_context(l, i, e))?;
            }
            let (emitted, rest) = x.split_cols(level.emit);
            u = Some(match u {
                None => emitted,
                Some(acc) => acc.concat_cols(&emitted)?,
            });
            x = rest;
        }
        let u = u.expect("at least one level");
        if !u.is_finite() || logdet.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence("non-finite value in normalizing pass".into()));
        }
        Ok((u, logdet))
    }

    /// Generating pass: inverse of [`FlowStack::normalize`].
    pub fn generate(&self, u: &Tensor, cond: Option<&Tensor>) -> Result<(Tensor, Vec<f64>)> {
        self.check_input(u, cond)?;
        let n = u.rows();
        let mut logdet = vec![0.0; n];
        let mut chunks = Vec::with_capacity(self.levels.len());
        let mut rest = u.clone();
        for level in &self.levels {
            let (c, r) = rest.split_cols(level.emit);
            chunks.push(c);
            rest = r;
        }
        let mut x: Option<Tensor> = None;
        for (l, level) in self.levels.iter().enumerate().rev() {
            let chunk = &chunks[l];
            let mut h = match x {
                None => chunk.clone(),
                Some(forwarded) => chunk.concat_cols(&forwarded)?,
            };
            for (i, layer) in level.layers.iter().enumerate().rev() {
                h = Self::apply_layer(layer, &h, cond, Direction::Generating, &mut logdet)
                    .map_err(|e| layer_context(l, i, e))?;
            }
            x = Some(h);
        }
        let z = x.expect("at least one level");
        if !z.is_finite() {
            return Err(Error::Divergence("non-finite value in generating pass".into()));
        }
        Ok((z, logdet))
    }

    /// `log p(z) = log N(u; 0, I) + log|det ∂u/∂z|`, per sample.
    pub fn log_prob(&self, z: &Tensor, cond: Option<&Tensor>) -> Result<Vec<f64>> {
        let (u, logdet) = self.normalize(z, cond)?;
        Ok((0..u.rows())
            .map(|i| math::std_normal_log_density(u.row(i)) + logdet[i])
            .collect())
    }

    /// Mean negative log-likelihood under running statistics.
    pub fn nll(&self, z: &Tensor, cond: Option<&Tensor>) -> Result<f64> {
        let lp = self.log_prob(z, cond)?;
        Ok(-lp.iter().sum::<f64>() / lp.len().max(1) as f64)
    }

    /// Draws `n` embeddings by pushing prior samples through the generating pass.
    pub fn sample(&self, n: usize, cond: Option<&Tensor>, rng: &mut Rng) -> Result<Tensor> {
        if !self.is_initialized() {
            return Err(Error::state("flow sampled before batch-norm statistics exist"));
        }
        let data: Vec<f64> = (0..n * self.dim).map(|_| StandardNormal.sample(rng)).collect();
        let u = Tensor::matrix(n, self.dim, data)?;
        Ok(self.generate(&u, cond)?.0)
    }

    /// Training step on a batch: mean NLL using batch statistics in every
    /// batch norm (which also updates their running statistics). Gradients
    /// are accumulated into the coupling networks; batch statistics are
    /// treated as constants.
    pub fn nll_backward(&mut self, z: &Tensor, cond: Option<&Tensor>) -> Result<f64> {
        self.check_input(z, cond)?;
        let n = z.rows();
        let mut logdet = vec![0.0; n];
        let mut x = z.clone();
        let mut emitted = Vec::with_capacity(self.levels.len());
        for (l, level) in self.levels.iter_mut().enumerate() {
            for (i, layer) in level.layers.iter_mut().enumerate() {
                x = match layer {
                    FlowLayer::Permutation(p) => p.apply(&x),
                    FlowLayer::BatchNorm(b) => {
                        let (y, ld) = b.forward_train(&x)?;
                        logdet.iter_mut().for_each(|v| *v += ld);
                        y
                    }
                    FlowLayer::Coupling(c) => {
                        let (y, ld) = c
                            .forward_train(&x, cond)
                            .map_err(|e| layer_context(l, i, e))?;
                        logdet.iter_mut().zip(ld).for_each(|(v, d)| *v += d);
                        y
                    }
                };
            }
            let (e, rest) = x.split_cols(level.emit);
            emitted.push(e);
            x = rest;
        }
        let mut loss = 0.0;
        for i in 0..n {
            let mut sq = 0.0;
            for e in &emitted {
                sq += e.row(i).iter().map(|v| v * v).sum::<f64>();
            }
            loss += 0.5 * sq + 0.5 * math::LN_2PI * self.dim as f64 - logdet[i];
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence("non-finite negative log-likelihood".into()));
        }

        let scale = 1.0 / n as f64;
        let grad_logdet = -scale;
        let mut grad_next: Option<Tensor> = None;
        for (l, level) in self.levels.iter_mut().enumerate().rev() {
            let mut g = emitted[l].clone();
            g.scale(scale);
            if let Some(next) = grad_next {
                g = g.concat_cols(&next)?;
            }
            for layer in level.layers.iter_mut().rev() {
                g = match layer {
                    FlowLayer::Permutation(p) => p.invert(&g),
                    FlowLayer::BatchNorm(b) => b.backward(&g)?,
                    FlowLayer::Coupling(c) => c.backward(&g, grad_logdet)?,
                };
            }
            grad_next = Some(g);
        }
        Ok(loss)
    }
}

impl Parameters for FlowStack {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Tensor, &mut Tensor)) {
        for level in &mut self.levels {
            for layer in &mut level.layers {
                if let FlowLayer::Coupling(c) = layer {
                    c.visit_params(f);
                }
            }
        }
    }

    fn num_params(&self) -> usize {
        self.couplings().map(Parameters::num_params).sum()
    }
}
