//! Oracles shared by the integration tests.
#![allow(dead_code)]

pub mod grad;

use nalgebra::DMatrix;
use prer_core::data::{synth_blobs, TaskStream};
use prer_core::flow::{FlowConfig, FlowLayer, FlowStack};
use prer_core::model::{Conditioning, EncoderSpec, ModelConfig};
use prer_core::nn::{Mode, Network, Parameters};
use prer_core::pipeline::{FlowTopology, Learner, Strategy, TrainConfig};
use prer_core::rng::{from_seed, Rng};
use prer_core::Tensor;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub const FD_STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e-2)`: relative, with absolute behaviour for
/// gradients too small for finite differences to resolve relatively.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2)
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal(rng)).collect()).unwrap()
}

/// Adds `N(0, scale²)` noise to every parameter.
pub fn perturb(module: &mut dyn Parameters, scale: f64, rng: &mut Rng) {
    module.visit_params(&mut |p, _| {
        p.data_mut().iter_mut().for_each(|v| *v += scale * normal(rng));
    });
}

fn param_at(module: &mut dyn Parameters, index: usize) -> f64 {
    let mut seen = 0;
    let mut out = f64::NAN;
    module.visit_params(&mut |p, _| {
        if index >= seen && index < seen + p.len() {
            out = p.data()[index - seen];
        }
        seen += p.len();
    });
    out
}

fn set_param(module: &mut dyn Parameters, index: usize, value: f64) {
    let mut seen = 0;
    module.visit_params(&mut |p, _| {
        if index >= seen && index < seen + p.len() {
            p.data_mut()[index - seen] = value;
        }
        seen += p.len();
    });
}

fn grads(module: &mut dyn Parameters) -> Vec<f64> {
    let mut out = Vec::new();
    module.visit_params(&mut |_, g| out.extend_from_slice(g.data()));
    out
}

/// Largest relative error over input and parameter gradients of
/// `L = Σ r ⊙ net(x)`. With `mask_seed`, the pass runs in training mode
/// with the same dropout masks for every evaluation.
pub fn check_network(
    net: &mut Network,
    x: &Tensor,
    cond: Option<&Tensor>,
    mask_seed: Option<u64>,
    rng: &mut Rng,
) -> f64 {
    let run = |net: &mut Network, x: &Tensor| -> Tensor {
        match mask_seed {
            Some(s) => net.forward(x, cond, Mode::Train(&mut from_seed(s))).unwrap(),
            None => net.forward(x, cond, Mode::Eval).unwrap(),
        }
    };
    let y = run(net, x);
    let r = random_tensor(y.shape(), rng);
    let loss = |y: &Tensor| -> f64 { y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum() };

    net.zero_grad();
    run(net, x);
    let gx = net.backward(&r).unwrap();
    let gp = grads(net);

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += FD_STEP;
        let mut xm = x.clone();
        xm.data_mut()[i] -= FD_STEP;
        let num = (loss(&run(net, &xp)) - loss(&run(net, &xm))) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(gx.data()[i], num));
    }
    for (k, &analytic) in gp.iter().enumerate() {
        let v = param_at(net, k);
        set_param(net, k, v + FD_STEP);
        let lp = loss(&run(net, x));
        set_param(net, k, v - FD_STEP);
        let lm = loss(&run(net, x));
        set_param(net, k, v);
        worst = worst.max(rel_err(analytic, (lp - lm) / (2.0 * FD_STEP)));
    }
    net.clear_cache();
    worst
}

/// Largest relative error of a loss gradient `(value, grad) = f(input)`.
pub fn check_loss(input: &Tensor, f: impl Fn(&Tensor) -> (f64, Tensor)) -> f64 {
    let (_, g) = f(input);
    let mut worst: f64 = 0.0;
    for i in 0..input.len() {
        let mut p = input.clone();
        p.data_mut()[i] += FD_STEP;
        let mut m = input.clone();
        m.data_mut()[i] -= FD_STEP;
        let num = (f(&p).0 - f(&m).0) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(g.data()[i], num));
    }
    worst
}

/// A stack with perturbed couplings and random batch-norm statistics, so
/// that no block is close to the identity.
pub fn random_stack(dim: usize, levels: usize, blocks: usize, classes: usize, rng: &mut Rng) -> FlowStack {
    let mut cfg = FlowConfig::new(dim, levels, blocks);
    if classes > 0 {
        cfg = cfg.conditioned(classes);
    }
    let mut flow = FlowStack::new(&cfg, rng).unwrap();
    for l in 0..levels {
        for layer in flow.layers_mut(l) {
            match layer {
                FlowLayer::Coupling(c) => {
                    let (s, t) = c.networks_mut();
                    perturb(s, 0.2, rng);
                    perturb(t, 0.2, rng);
                }
                FlowLayer::BatchNorm(b) => {
                    let w = b.width();
                    let mean: Vec<f64> = (0..w).map(|_| 0.3 * normal(rng)).collect();
                    let var: Vec<f64> = (0..w).map(|_| rng.random_range(0.6..1.6)).collect();
                    b.set_statistics(&mean, &var).unwrap();
                }
                FlowLayer::Permutation(_) => {}
            }
        }
    }
    flow
}

/// `log|det ∂u/∂z|` at `z` by five-point central differences of the
/// normalizing pass. Truncation error is O(h⁴), so a coarse `h` keeps
/// round-off small on badly conditioned Jacobians.
pub fn numerical_logdet(flow: &FlowStack, z: &[f64], cond: Option<&Tensor>, h: f64) -> f64 {
    let d = z.len();
    let at = |j: usize, offset: f64| -> Vec<f64> {
        let mut p = z.to_vec();
        p[j] += offset;
        flow.normalize(&Tensor::row_vector(&p), cond).unwrap().0.data().to_vec()
    };
    let mut jac = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let (p2, p1, m1, m2) = (at(j, 2.0 * h), at(j, h), at(j, -h), at(j, -2.0 * h));
        for i in 0..d {
            jac[(i, j)] = (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * h);
        }
    }
    jac.determinant().abs().ln()
}

/// Worst errors of one random stack: round trip in both directions and
/// accumulated log-det against the numerical Jacobian.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlowCheck {
    pub round_trip: f64,
    pub logdet: f64,
    /// Samples whose stencil straddled a ReLU kink and were not compared.
    pub skipped: usize,
}

pub fn check_random_stack(seed: u64, dim: usize, levels: usize, blocks: usize, conditioned: bool) -> FlowCheck {
    let mut rng = from_seed(seed);
    let classes = if conditioned { 3 } else { 0 };
    let flow = random_stack(dim, levels, blocks, classes, &mut rng);
    let z = random_tensor(&[5, dim], &mut rng);
    let labels = [0, 1, 2, 0, 1];
    let cond = conditioned.then(|| prer_core::tensor::one_hot(&labels, 3));

    let (u, logdet) = flow.normalize(&z, cond.as_ref()).unwrap();
    let (back, _) = flow.generate(&u, cond.as_ref()).unwrap();
    let (fwd, _) = flow.generate(&z, cond.as_ref()).unwrap();
    let (again, _) = flow.normalize(&fwd, cond.as_ref()).unwrap();
    let mut out = FlowCheck {
        round_trip: back.max_abs_diff(&z).max(again.max_abs_diff(&z)),
        ..FlowCheck::default()
    };
    for i in 0..z.rows() {
        let c = conditioned.then(|| prer_core::tensor::one_hot(&labels[i..=i], 3));
        let coarse = numerical_logdet(&flow, z.row(i), c.as_ref(), 2e-4);
        let fine = numerical_logdet(&flow, z.row(i), c.as_ref(), 1e-4);
        // A ReLU kink inside the stencil breaks the difference quotient.
        if (coarse - fine).abs() > 1e-5 {
            out.skipped += 1;
            continue;
        }
        out.logdet = out.logdet.max((coarse - logdet[i]).abs());
    }
    out
}

/// Desk-scale continual stream: 10 unit-variance blobs in 20 dimensions,
/// two classes per task.
pub const DESK_SEPARATION: f64 = 2.5;
pub const DESK_PER_CLASS: usize = 200;

pub fn desk_stream(seed: u64) -> TaskStream {
    let set = synth_blobs(10, DESK_PER_CLASS, 20, DESK_SEPARATION, seed).unwrap();
    TaskStream::build(&set, 2, seed).unwrap()
}

pub fn desk_model(conditioning: Conditioning) -> ModelConfig {
    let mut m = ModelConfig::mlp(&[20], 10);
    m.encoder = EncoderSpec::Mlp { hidden: vec![32] };
    m.class_embedding = 8;
    m.recon_embedding = 8;
    m.head_hidden = vec![32, 16];
    m.decoder_hidden = vec![64];
    m.conditioning = conditioning;
    m
}

pub fn desk_train() -> TrainConfig {
    TrainConfig {
        classifier_epochs: 50,
        batch_size: 32,
        ..TrainConfig::default()
    }
}

pub fn desk_topology() -> FlowTopology {
    FlowTopology {
        levels: 1,
        blocks: 4,
        hidden_multiplier: 2,
    }
}

pub fn desk_learner(strategy: Strategy, conditioning: Conditioning, seed: u64) -> Learner {
    Learner::new(strategy, desk_train(), desk_model(conditioning), desk_topology(), seed).unwrap()
}
