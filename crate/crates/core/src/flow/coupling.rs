use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::Direction;
use crate::error::{Error, Result};
use crate::math;
use crate::nn::{Dense, Layer, Mode, Network, Parameters};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Affine coupling. The input splits into `a` (first `⌈w/2⌉` columns) and
/// `b`; `a` passes through while `b` is scaled and shifted by amounts that
/// two networks compute from `a` (and the class condition, if any).
///
/// Generating: `c = exp(log s) ⊙ b + t`, log-det `Σ log s`.
/// Normalizing: `b = (c − t) ⊙ exp(−log s)`, log-det `−Σ log s`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingLayer {
    width: usize,
    cond_width: usize,
    scale_net: Network,
    shift_net: Network,
    /// `log s = bound · tanh(raw / bound)` when set.
    log_scale_bound: Option<f64>,
    #[serde(skip)]
    cache: Option<TrainCache>,
}

impl PartialEq for CouplingLayer {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.cond_width == other.cond_width
            && self.scale_net == other.scale_net
            && self.shift_net == other.shift_net
            && self.log_scale_bound == other.log_scale_bound
    }
}

#[derive(Debug, Clone)]
struct TrainCache {
    /// `b` after the normalizing map.
    out_b: Tensor,
    log_s: Tensor,
    /// `d log s / d raw`, elementwise.
    squash_grad: Vec<f64>,
}

fn conditioner(input: usize, cond: usize, hidden: usize, output: usize, rng: &mut Rng) -> Network {
    let mut layers = Vec::new();
    if cond > 0 {
        layers.push(Layer::ConcatCondition { width: cond });
    }
    layers.push(Layer::Dense(Dense::new(input + cond, hidden, rng)));
    layers.push(Layer::Relu);
    // Zero output layer: every coupling starts as the identity map.
    layers.push(Layer::Dense(Dense::zeros(hidden, output)));
    Network::new(layers)
}

impl CouplingLayer {
    /// `cond_width == 0` builds an unconditioned layer.
    pub fn new(
        width: usize,
        hidden: usize,
        cond_width: usize,
        log_scale_bound: Option<f64>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if width < 2 {
            return Err(Error::config("coupling layer needs width of at least 2"));
        }
        let a = width.div_ceil(2);
        let b = width - a;
        Ok(Self {
            width,
            cond_width,
            scale_net: conditioner(a, cond_width, hidden, b, rng),
            shift_net: conditioner(a, cond_width, hidden, b, rng),
            log_scale_bound,
            cache: None,
        })
    }

    /// Builds a layer from explicit conditioner networks mapping
    /// `⌈w/2⌉ (+ cond)` columns to `⌊w/2⌋` columns.
    pub fn from_networks(
        width: usize,
        cond_width: usize,
        scale_net: Network,
        shift_net: Network,
        log_scale_bound: Option<f64>,
    ) -> Result<Self> {
        let b = width / 2;
        for net in [&scale_net, &shift_net] {
            if net.output_width() != Some(b) || net.condition_width().unwrap_or(0) != cond_width {
                return Err(Error::config("conditioner networks do not fit the coupling split"));
            }
        }
        Ok(Self {
            width,
            cond_width,
            scale_net,
            shift_net,
            log_scale_bound,
            cache: None,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn split(&self) -> usize {
        self.width.div_ceil(2)
    }

    pub fn is_conditioned(&self) -> bool {
        self.cond_width > 0
    }

    pub fn condition_width(&self) -> usize {
        self.cond_width
    }

    pub fn networks_mut(&mut self) -> (&mut Network, &mut Network) {
        (&mut self.scale_net, &mut self.shift_net)
    }

    fn check_cond<'c>(&self, cond: Option<&'c Tensor>) -> Result<Option<&'c Tensor>> {
        match (self.is_conditioned(), cond) {
            (true, Some(c)) => Ok(Some(c)),
            (false, _) => Ok(None),
            (true, None) => Err(Error::config("conditioned coupling layer needs a class vector")),
        }
    }

    /// Maps raw network output to `log s` and its derivative.
    fn squash(&self, raw: Tensor) -> (Tensor, Vec<f64>) {
        match self.log_scale_bound {
            None => {
                let n = raw.len();
                (raw, vec![1.0; n])
            }
            Some(bound) => {
                let mut ls = raw;
                let mut deriv = Vec::with_capacity(ls.len());
                for v in ls.data_mut() {
                    let th = math::tanh(*v / bound);
                    deriv.push(1.0 - th * th);
                    *v = bound * th;
                }
                (ls, deriv)
            }
        }
    }

    fn combine(
        b: &Tensor,
        log_s: &Tensor,
        t: &Tensor,
        direction: Direction,
    ) -> Result<(Tensor, Vec<f64>)> {
        if !log_s.is_finite() || !t.is_finite() {
            return Err(Error::Divergence("non-finite coupling scale or shift".into()));
        }
        let n = b.rows();
        let mut out = b.clone();
        let mut logdet = vec![0.0; n];
        for i in 0..n {
            let ls = log_s.row(i);
            let tr = t.row(i);
            let row = out.row_mut(i);
            let mut sum = 0.0;
            for j in 0..row.len() {
                sum += ls[j];
                row[j] = match direction {
                    Direction::Generating => math::exp(ls[j]) * row[j] + tr[j],
                    Direction::Normalizing => (row[j] - tr[j]) * math::exp(-ls[j]),
                };
            }
            logdet[i] = match direction {
                Direction::Generating => sum,
                Direction::Normalizing => -sum,
            };
        }
        Ok((out, logdet))
    }

    /// Evaluation-mode map; returns the output and per-sample log-det.
    pub fn apply(
        &self,
        u: &Tensor,
        cond: Option<&Tensor>,
        direction: Direction,
    ) -> Result<(Tensor, Vec<f64>)> {
        let cond = self.check_cond(cond)?;
        let (a, b) = u.split_cols(self.split());
        let (log_s, _) = self.squash(self.scale_net.infer(&a, cond)?);
        let t = self.shift_net.infer(&a, cond)?;
        let (out_b, logdet) = Self::combine(&b, &log_s, &t, direction)?;
        Ok((a.concat_cols(&out_b)?, logdet))
    }

    /// Normalizing map that caches what [`CouplingLayer::backward`] needs.
    pub fn forward_train(&mut self, u: &Tensor, cond: Option<&Tensor>) -> Result<(Tensor, Vec<f64>)> {
        self.cache = None;
        let cond = self.check_cond(cond)?;
        let (a, b) = u.split_cols(self.split());
        let raw = self.scale_net.forward(&a, cond, Mode::Eval)?;
        let (log_s, squash_grad) = self.squash(raw);
        let t = self.shift_net.forward(&a, cond, Mode::Eval)?;
        let (out_b, logdet) = Self::combine(&b, &log_s, &t, Direction::Normalizing)?;
        let out = a.concat_cols(&out_b)?;
        self.cache = Some(TrainCache {
            out_b,
            log_s,
            squash_grad,
        });
        Ok((out, logdet))
    }

    /// Backward through the last training pass. `grad_logdet` is the
    /// derivative of the loss with respect to each sample's log-det.
    pub fn backward(&mut self, grad_out: &Tensor, grad_logdet: f64) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::state("coupling backward without a training pass"))?;
        let split = self.split();
        let (grad_a, grad_ob) = grad_out.split_cols(split);
        let n = grad_out.rows();
        let bw = self.width - split;
        let mut grad_raw = Tensor::zeros(&[n, bw]);
        let mut grad_t = Tensor::zeros(&[n, bw]);
        let mut grad_c = Tensor::zeros(&[n, bw]);
        for i in 0..n {
            let go = grad_ob.row(i);
            let ob = cache.out_b.row(i);
            let ls = cache.log_s.row(i);
            for j in 0..bw {
                let inv_s = math::exp(-ls[j]);
                // logdet = -Σ log s; out_b = (c - t) · exp(-log s)
                let g_ls = -go[j] * ob[j] - grad_logdet;
                grad_raw.row_mut(i)[j] = g_ls * cache.squash_grad[i * bw + j];
                grad_t.row_mut(i)[j] = -go[j] * inv_s;
                grad_c.row_mut(i)[j] = go[j] * inv_s;
            }
        }
        let mut g_a = grad_a;
        g_a.add_assign(&self.scale_net.backward(&grad_raw)?)?;
        g_a.add_assign(&self.shift_net.backward(&grad_t)?)?;
        g_a.concat_cols(&grad_c)
    }
}

impl Parameters for CouplingLayer {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Tensor, &mut Tensor)) {
        self.scale_net.visit_params(f);
        self.shift_net.visit_params(f);
    }

    fn num_params(&self) -> usize {
        self.scale_net.num_params() + self.shift_net.num_params()
    }
}
