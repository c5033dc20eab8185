use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::layer::{Dropout, Layer};
use super::Parameters;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Whether a pass is a training pass. Dropout masks are drawn only in
/// [`Mode::Train`], from the supplied generator.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

#[derive(Debug, Clone)]
enum Cache {
    Input(Tensor),
    Mask(Option<Vec<f64>>),
    Shape(Vec<usize>),
    Width(usize),
}

/// An ordered stack of layers with cached intermediates for backprop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
    #[serde(skip)]
    cache: Option<Vec<Cache>>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self {
            layers,
            cache: None,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Width of a condition vector consumed by a `ConcatCondition` layer, if any.
    pub fn condition_width(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            Layer::ConcatCondition { width } => Some(*width),
            _ => None,
        })
    }

    /// Output width of the last dense layer.
    pub fn output_width(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Dense(d) => Some(d.output_width()),
            _ => None,
        })
    }

    fn check_condition(&self, cond: Option<&Tensor>) -> Result<()> {
        match (self.condition_width(), cond) {
            (Some(_), None) => Err(Error::config("network expects a condition vector")),
            (None, Some(_)) => Err(Error::config(
                "condition supplied to a network without a condition input",
            )),
            _ => Ok(()),
        }
    }

    fn apply(
        &self,
        index: usize,
        x: &Tensor,
        cond: Option<&Tensor>,
        mask: Option<&[f64]>,
    ) -> Result<Tensor> {
        let layer = &self.layers[index];
        let mismatch = |expected: &str| Error::LayerShape {
            layer: index,
            expected: expected.to_string(),
            found: format!("{:?}", x.shape()),
        };
        match layer {
            Layer::Dense(d) => {
                if x.shape().len() != 2 || x.row_len() != d.input_width() {
                    return Err(mismatch(&format!("(batch, {})", d.input_width())));
                }
                Ok(d.forward(x))
            }
            Layer::Conv2d(c) => {
                if x.shape().len() != 4 || c.output_shape(&x.shape()[1..]).is_none() {
                    return Err(mismatch(&format!(
                        "(batch, {}, h, w) with h, w >= kernel",
                        c.weight.shape()[1]
                    )));
                }
                c.forward(x)
            }
            Layer::Relu => {
                let mut y = x.clone();
                y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                Ok(y)
            }
            Layer::Dropout(_) => {
                let mut y = x.clone();
                if let Some(m) = mask {
                    y.data_mut().iter_mut().zip(m).for_each(|(v, k)| *v *= k);
                }
                Ok(y)
            }
            Layer::Flatten => {
                let n = x.rows();
                let w = x.row_len();
                x.clone().reshape(&[n, w])
            }
            Layer::ConcatCondition { width } => {
                let c = cond.ok_or_else(|| Error::config("missing condition vector"))?;
                if x.shape().len() != 2 {
                    return Err(mismatch("(batch, features)"));
                }
                if c.rows() != x.rows() || c.row_len() != *width {
                    return Err(Error::LayerShape {
                        layer: index,
                        expected: format!("condition ({}, {width})", x.rows()),
                        found: format!("{:?}", c.shape()),
                    });
                }
                x.concat_cols(c)
            }
        }
    }

    /// Forward pass without caching; always evaluation mode.
    pub fn infer(&self, x: &Tensor, cond: Option<&Tensor>) -> Result<Tensor> {
        self.check_condition(cond)?;
        let mut h = x.clone();
        for i in 0..self.layers.len() {
            h = self.apply(i, &h, cond, None)?;
        }
        Ok(h)
    }

    /// Forward pass that records intermediates for [`Network::backward`].
    pub fn forward(&mut self, x: &Tensor, cond: Option<&Tensor>, mut mode: Mode<'_>) -> Result<Tensor> {
        self.cache = None;
        self.check_condition(cond)?;
        let mut cache = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for i in 0..self.layers.len() {
            let mut mask = None;
            let entry = match &self.layers[i] {
                Layer::Dense(_) | Layer::Conv2d(_) | Layer::Relu => Cache::Input(h.clone()),
                Layer::Dropout(d) => {
                    if let Mode::Train(rng) = &mut mode {
                        mask = Some(Dropout::mask(d, h.len(), rng));
                    }
                    Cache::Mask(None)
                }
                Layer::Flatten => Cache::Shape(h.shape().to_vec()),
                Layer::ConcatCondition { .. } => Cache::Width(h.row_len()),
            };
            h = self.apply(i, &h, cond, mask.as_deref())?;
            cache.push(match entry {
                Cache::Mask(_) => Cache::Mask(mask),
                other => other,
            });
        }
        self.cache = Some(cache);
        Ok(h)
    }

    /// Backpropagates `grad` through the last forward pass, accumulating
    /// parameter gradients, and returns the gradient for the network input.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::state("backward called without a preceding forward pass"))?;
        let mut g = grad.clone();
        for (i, entry) in cache.iter().enumerate().rev() {
            g = match (&mut self.layers[i], entry) {
                (Layer::Dense(d), Cache::Input(x)) => {
                    if g.rows() != x.rows() || g.row_len() != d.output_width() {
                        return Err(Error::LayerShape {
                            layer: i,
                            expected: format!("gradient ({}, {})", x.rows(), d.output_width()),
                            found: format!("{:?}", g.shape()),
                        });
                    }
                    d.backward(x, &g)
                }
                (Layer::Conv2d(c), Cache::Input(x)) => c.backward(x, &g)?,
                (Layer::Relu, Cache::Input(x)) => {
                    g.data_mut()
                        .iter_mut()
                        .zip(x.data())
                        .for_each(|(gv, xv)| {
                            if *xv <= 0.0 {
                                *gv = 0.0
                            }
                        });
                    g
                }
                (Layer::Dropout(_), Cache::Mask(mask)) => {
                    if let Some(m) = mask {
                        g.data_mut().iter_mut().zip(m).for_each(|(gv, k)| *gv *= k);
                    }
                    g
                }
                (Layer::Flatten, Cache::Shape(shape)) => g.reshape(shape)?,
                (Layer::ConcatCondition { .. }, Cache::Width(w)) => g.split_cols(*w).0,
                _ => return Err(Error::state(format!("stale cache at layer {i}"))),
            };
        }
        Ok(g)
    }

    /// Drops any cached forward state.
    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

impl Parameters for Network {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Tensor, &mut Tensor)) {
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(d) => {
                    d.ensure_grads();
                    f(&mut d.weight, &mut d.grad_weight);
                    f(&mut d.bias, &mut d.grad_bias);
                }
                Layer::Conv2d(c) => {
                    c.ensure_grads();
                    f(&mut c.weight, &mut c.grad_weight);
                    f(&mut c.bias, &mut c.grad_bias);
                }
                _ => {}
            }
        }
    }

    fn num_params(&self) -> usize {
        Network::num_params(self)
    }
}

/// Dense layers of the given widths with ReLU between them (none after the last).
pub fn mlp(widths: &[usize], rng: &mut Rng) -> Network {
    let mut layers = vec![];
    for (i, pair) in widths.windows(2).enumerate() {
        layers.push(Layer::Dense(super::layer::Dense::new(pair[0], pair[1], rng)));
        if i + 2 < widths.len() {
            layers.push(Layer::Relu);
        }
    }
    Network::new(layers)
}
