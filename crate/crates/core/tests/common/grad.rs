//! One randomly drawn finite-difference instance per layer or loss kind.

use super::{check_loss, check_network, perturb, random_tensor, rel_err, FD_STEP};
use prer_core::flow::CouplingLayer;
use prer_core::nn::loss::{cosine_distance_batch, cross_entropy, mse};
use prer_core::nn::{Conv2d, Dense, Dropout, Layer, Network, Padding, Parameters};
use prer_core::rng::from_seed;
use prer_core::tensor::one_hot;
use prer_core::Tensor;
use rand::Rng as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Dense,
    Conv2d,
    Relu,
    Dropout,
    Flatten,
    ConcatCondition,
    Mlp,
    CrossEntropy,
    Mse,
    Cosine,
    Coupling,
}

pub const ALL: [Kind; 11] = [
    Kind::Dense,
    Kind::Conv2d,
    Kind::Relu,
    Kind::Dropout,
    Kind::Flatten,
    Kind::ConcatCondition,
    Kind::Mlp,
    Kind::CrossEntropy,
    Kind::Mse,
    Kind::Cosine,
    Kind::Coupling,
];

/// Worst relative error of one random instance, or `None` when the draw
/// lands too close to a ReLU kink for central differences to be valid.
pub fn case(kind: Kind, seed: u64) -> Option<f64> {
    let mut rng = from_seed(seed);
    let rng = &mut rng;
    let err = match kind {
        Kind::Dense => {
            let (n, i, o) = (rng.random_range(1..4), rng.random_range(1..6), rng.random_range(1..6));
            let mut net = Network::new(vec![Layer::Dense(Dense::new(i, o, rng))]);
            perturb(&mut net, 0.1, rng);
            let x = random_tensor(&[n, i], rng);
            check_network(&mut net, &x, None, None, rng)
        }
        Kind::Conv2d => {
            let (ci, co) = (rng.random_range(1..3), rng.random_range(1..3));
            let k = rng.random_range(1..4);
            let stride = rng.random_range(1..3);
            let padding = if rng.random::<bool>() { Padding::Same } else { Padding::Valid };
            let (h, w) = (rng.random_range(k..6), rng.random_range(k..6));
            let mut net = Network::new(vec![Layer::Conv2d(Conv2d::new(ci, co, k, stride, padding, rng))]);
            perturb(&mut net, 0.1, rng);
            let x = random_tensor(&[2, ci, h, w], rng);
            check_network(&mut net, &x, None, None, rng)
        }
        Kind::Relu => {
            let mut x = random_tensor(&[3, 5], rng);
            x.data_mut().iter_mut().for_each(|v| {
                if v.abs() < 1e-2 {
                    *v += 0.05
                }
            });
            check_network(&mut Network::new(vec![Layer::Relu]), &x, None, None, rng)
        }
        Kind::Dropout => {
            let p = rng.random_range(0.0..0.9);
            let mut net = Network::new(vec![Layer::Dropout(Dropout::new(p).unwrap())]);
            let x = random_tensor(&[3, 4], rng);
            check_network(&mut net, &x, None, Some(seed ^ 1), rng)
        }
        Kind::Flatten => {
            let mut net = Network::new(vec![Layer::Flatten, Layer::Dense(Dense::new(12, 3, rng))]);
            let x = random_tensor(&[2, 3, 2, 2], rng);
            check_network(&mut net, &x, None, None, rng)
        }
        Kind::ConcatCondition => {
            let mut net = Network::new(vec![
                Layer::ConcatCondition { width: 3 },
                Layer::Dense(Dense::new(5, 4, rng)),
            ]);
            let x = random_tensor(&[4, 2], rng);
            let cond = one_hot(&[0, 2, 1, 2], 3);
            check_network(&mut net, &x, Some(&cond), None, rng)
        }
        Kind::Mlp => {
            let mut net = prer_core::nn::mlp(&[4, 6, 3], rng);
            let x = random_tensor(&[3, 4], rng);
            let pre = Network::new(net.layers()[..1].to_vec()).infer(&x, None).unwrap();
            if pre.data().iter().any(|v| v.abs() < 1e-3) {
                return None;
            }
            check_network(&mut net, &x, None, None, rng)
        }
        Kind::CrossEntropy => {
            let (n, c) = (rng.random_range(1..5), rng.random_range(2..6));
            let logits = random_tensor(&[n, c], rng);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            check_loss(&logits, |z| cross_entropy(z, &labels).unwrap())
        }
        Kind::Mse => {
            let target = random_tensor(&[3, 4], rng);
            let pred = random_tensor(&[3, 4], rng);
            check_loss(&pred, |p| mse(&target, p).unwrap())
        }
        Kind::Cosine => {
            let target = random_tensor(&[3, 5], rng);
            let pred = random_tensor(&[3, 5], rng);
            check_loss(&pred, |p| cosine_distance_batch(&target, p).unwrap())
        }
        Kind::Coupling => coupling(rng)?,
    };
    Some(err)
}

/// Input and parameter gradients of `Σ r ⊙ y + c·Σ logdet`.
fn coupling(rng: &mut prer_core::rng::Rng) -> Option<f64> {
    let width = rng.random_range(2..6);
    let conditioned = rng.random::<bool>();
    let cond_width = if conditioned { 3 } else { 0 };
    let mut layer = CouplingLayer::new(width, 2 * width, cond_width, Some(2.0), rng).unwrap();
    {
        let (s, t) = layer.networks_mut();
        perturb(s, 0.5, rng);
        perturb(t, 0.5, rng);
    }
    let x = random_tensor(&[3, width], rng);
    let cond = conditioned.then(|| one_hot(&[0, 1, 2], 3));
    let r = random_tensor(&[3, width], rng);
    let c_ld = rng.random_range(-1.0..1.0);
    let objective = |layer: &mut CouplingLayer, x: &Tensor| -> f64 {
        let (y, ld) = layer.forward_train(x, cond.as_ref()).unwrap();
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>() + c_ld * ld.iter().sum::<f64>()
    };
    layer.zero_grad();
    objective(&mut layer, &x);
    let gx = layer.backward(&r, c_ld).unwrap();
    let mut analytic = Vec::new();
    layer.visit_params(&mut |_, g| analytic.extend_from_slice(g.data()));

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut p = x.clone();
        p.data_mut()[i] += FD_STEP;
        let mut m = x.clone();
        m.data_mut()[i] -= FD_STEP;
        let num = (objective(&mut layer, &p) - objective(&mut layer, &m)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(gx.data()[i], num));
    }
    for (k, a) in analytic.iter().enumerate() {
        let nudge = |layer: &mut CouplingLayer, delta: f64| {
            let mut seen = 0;
            layer.visit_params(&mut |p, _| {
                if k >= seen && k < seen + p.len() {
                    p.data_mut()[k - seen] += delta;
                }
                seen += p.len();
            });
        };
        nudge(&mut layer, FD_STEP);
        let lp = objective(&mut layer, &x);
        nudge(&mut layer, -2.0 * FD_STEP);
        let lm = objective(&mut layer, &x);
        nudge(&mut layer, FD_STEP);
        worst = worst.max(rel_err(*a, (lp - lm) / (2.0 * FD_STEP)));
    }
    Some(worst)
}
