use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Uniform in ±sqrt(6 / (fan_in + fan_out)).
fn xavier(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let bound = math::sqrt(6.0 / (fan_in + fan_out).max(1) as f64);
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..=bound);
    }
    t
}

/// Fully connected layer, `y = x Wᵀ + b` with `W` of shape `(out, in)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    #[serde(skip)]
    pub(crate) grad_weight: Tensor,
    #[serde(skip)]
    pub(crate) grad_bias: Tensor,
}

// Accumulated gradients are scratch state and do not take part in equality.
impl PartialEq for Dense {
    fn eq(&self, other: &Self) -> bool {
        self.weight == other.weight && self.bias == other.bias
    }
}

impl Dense {
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        Self::from_params(
            xavier(&[output, input], input, output, rng),
            Tensor::zeros(&[output]),
        )
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self::from_params(Tensor::zeros(&[output, input]), Tensor::zeros(&[output]))
    }

    pub fn from_params(weight: Tensor, bias: Tensor) -> Self {
        Self {
            grad_weight: Tensor::zeros(weight.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weight,
            bias,
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_width(&self) -> usize {
        self.weight.shape()[0]
    }

    pub(crate) fn ensure_grads(&mut self) {
        if self.grad_weight.shape() != self.weight.shape() {
            self.grad_weight = Tensor::zeros(self.weight.shape());
        }
        if self.grad_bias.shape() != self.bias.shape() {
            self.grad_bias = Tensor::zeros(self.bias.shape());
        }
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Tensor {
        let n = x.rows();
        let (out, inp) = (self.output_width(), self.input_width());
        let w = self.weight.data();
        let b = self.bias.data();
        let mut y = vec![0.0; n * out];
        for i in 0..n {
            let xr = x.row(i);
            let yr = &mut y[i * out..(i + 1) * out];
            for o in 0..out {
                let wr = &w[o * inp..(o + 1) * inp];
                let mut acc = b[o];
                for k in 0..inp {
                    acc += wr[k] * xr[k];
                }
                yr[o] = acc;
            }
        }
        Tensor::new(vec![n, out], y).expect("dense output shape")
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub(crate) fn backward(&mut self, x: &Tensor, grad_y: &Tensor) -> Tensor {
        self.ensure_grads();
        let n = x.rows();
        let (out, inp) = (self.output_width(), self.input_width());
        let mut grad_x = vec![0.0; n * inp];
        {
            let gw = self.grad_weight.data_mut();
            for i in 0..n {
                let xr = x.row(i);
                let gy = grad_y.row(i);
                for o in 0..out {
                    let g = gy[o];
                    if g == 0.0 {
                        continue;
                    }
                    let gwr = &mut gw[o * inp..(o + 1) * inp];
                    for k in 0..inp {
                        gwr[k] += g * xr[k];
                    }
                }
            }
        }
        let gb = self.grad_bias.data_mut();
        let w = self.weight.data();
        for i in 0..n {
            let gy = grad_y.row(i);
            let gx = &mut grad_x[i * inp..(i + 1) * inp];
            for o in 0..out {
                let g = gy[o];
                gb[o] += g;
                if g == 0.0 {
                    continue;
                }
                let wr = &w[o * inp..(o + 1) * inp];
                for k in 0..inp {
                    gx[k] += g * wr[k];
                }
            }
        }
        Tensor::new(vec![n, inp], grad_x).expect("dense grad shape")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    /// No padding; output shrinks by `kernel - 1`.
    Valid,
    /// Zero padding so that output size is `ceil(input / stride)`.
    Same,
}

/// 2-D convolution over `(batch, channels, height, width)` inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Conv2d {
    /// `(out_channels, in_channels, kernel, kernel)`
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: Padding,
    #[serde(skip)]
    pub(crate) grad_weight: Tensor,
    #[serde(skip)]
    pub(crate) grad_bias: Tensor,
}

impl PartialEq for Conv2d {
    fn eq(&self, other: &Self) -> bool {
        self.weight == other.weight
            && self.bias == other.bias
            && self.stride == other.stride
            && self.padding == other.padding
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    in_c: usize,
    out_c: usize,
    k: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let fan_out = out_channels * kernel * kernel;
        let weight = xavier(
            &[out_channels, in_channels, kernel, kernel],
            fan_in,
            fan_out,
            rng,
        );
        Self {
            grad_weight: Tensor::zeros(weight.shape()),
            grad_bias: Tensor::zeros(&[out_channels]),
            weight,
            bias: Tensor::zeros(&[out_channels]),
            stride: stride.max(1),
            padding,
        }
    }

    pub(crate) fn ensure_grads(&mut self) {
        if self.grad_weight.shape() != self.weight.shape() {
            self.grad_weight = Tensor::zeros(self.weight.shape());
        }
        if self.grad_bias.shape() != self.bias.shape() {
            self.grad_bias = Tensor::zeros(self.bias.shape());
        }
    }

    /// Output `(channels, height, width)` for an input `(channels, height, width)`.
    pub fn output_shape(&self, input: &[usize]) -> Option<[usize; 3]> {
        let g = self.geometry(input)?;
        Some([g.out_c, g.oh, g.ow])
    }

    fn geometry(&self, input: &[usize]) -> Option<ConvGeometry> {
        let ws = self.weight.shape();
        let (out_c, in_c, k) = (ws[0], ws[1], ws[2]);
        if input.len() != 3 || input[0] != in_c {
            return None;
        }
        let (h, w) = (input[1], input[2]);
        let s = self.stride;
        let (oh, ow, pad_top, pad_left) = match self.padding {
            Padding::Valid => {
                if h < k || w < k {
                    return None;
                }
                ((h - k) / s + 1, (w - k) / s + 1, 0, 0)
            }
            Padding::Same => {
                let oh = h.div_ceil(s);
                let ow = w.div_ceil(s);
                let ph = ((oh - 1) * s + k).saturating_sub(h);
                let pw = ((ow - 1) * s + k).saturating_sub(w);
                (oh, ow, ph / 2, pw / 2)
            }
        };
        Some(ConvGeometry {
            in_c,
            out_c,
            k,
            h,
            w,
            oh,
            ow,
            pad_top,
            pad_left,
        })
    }

    fn geometry_for(&self, x: &Tensor) -> Result<ConvGeometry> {
        self.geometry(&x.shape()[1..]).ok_or_else(|| {
            Error::shape(format!(
                "conv2d with weight {:?} cannot take input {:?}",
                self.weight.shape(),
                x.shape()
            ))
        })
    }

    /// Input coordinate for output position `o`, kernel offset `kk`.
    #[inline]
    fn source(o: usize, kk: usize, stride: usize, pad: usize, limit: usize) -> Option<usize> {
        let pos = (o * stride + kk).checked_sub(pad)?;
        (pos < limit).then_some(pos)
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let g = self.geometry_for(x)?;
        let n = x.rows();
        let wt = self.weight.data();
        let mut y = vec![0.0; n * g.out_c * g.oh * g.ow];
        for b in 0..n {
            let xs = x.row(b);
            for oc in 0..g.out_c {
                let base = ((b * g.out_c) + oc) * g.oh * g.ow;
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let mut acc = self.bias.data()[oc];
                        for ic in 0..g.in_c {
                            for ky in 0..g.k {
                                let Some(iy) = Self::source(oy, ky, self.stride, g.pad_top, g.h)
                                else {
                                    continue;
                                };
                                for kx in 0..g.k {
                                    let Some(ix) =
                                        Self::source(ox, kx, self.stride, g.pad_left, g.w)
                                    else {
                                        continue;
                                    };
                                    acc += wt[((oc * g.in_c + ic) * g.k + ky) * g.k + kx]
                                        * xs[(ic * g.h + iy) * g.w + ix];
                                }
                            }
                        }
                        y[base + oy * g.ow + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(vec![n, g.out_c, g.oh, g.ow], y)
    }

    pub(crate) fn backward(&mut self, x: &Tensor, grad_y: &Tensor) -> Result<Tensor> {
        self.ensure_grads();
        let g = self.geometry_for(x)?;
        let n = x.rows();
        let mut grad_x = Tensor::zeros(x.shape());
        let wt = self.weight.data().to_vec();
        for b in 0..n {
            let xs = x.row(b);
            let gys = grad_y.row(b);
            let gxs = grad_x.row_mut(b);
            for oc in 0..g.out_c {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let gy = gys[(oc * g.oh + oy) * g.ow + ox];
                        if gy == 0.0 {
                            continue;
                        }
                        self.grad_bias.data_mut()[oc] += gy;
                        let gw = self.grad_weight.data_mut();
                        for ic in 0..g.in_c {
                            for ky in 0..g.k {
                                let Some(iy) = Self::source(oy, ky, self.stride, g.pad_top, g.h)
                                else {
                                    continue;
                                };
                                for kx in 0..g.k {
                                    let Some(ix) =
                                        Self::source(ox, kx, self.stride, g.pad_left, g.w)
                                    else {
                                        continue;
                                    };
                                    let wi = ((oc * g.in_c + ic) * g.k + ky) * g.k + kx;
                                    let xi = (ic * g.h + iy) * g.w + ix;
                                    gw[wi] += gy * xs[xi];
                                    gxs[xi] += gy * wt[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(grad_x)
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - p)` while training,
/// so evaluation is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    /// Drop probability in `[0, 1)`.
    pub p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!("dropout probability {p} not in [0, 1)")));
        }
        Ok(Self { p })
    }

    pub(crate) fn mask(&self, len: usize, rng: &mut Rng) -> Vec<f64> {
        let keep = 1.0 - self.p;
        (0..len)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Relu,
    Dropout(Dropout),
    /// Collapses `(batch, ...)` into `(batch, features)`.
    Flatten,
    /// Appends a condition vector (e.g. a one-hot class) of `width` columns.
    ConcatCondition { width: usize },
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten => "flatten",
            Layer::ConcatCondition { .. } => "concat-condition",
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weight.len() + d.bias.len(),
            Layer::Conv2d(c) => c.weight.len() + c.bias.len(),
            _ => 0,
        }
    }
}
