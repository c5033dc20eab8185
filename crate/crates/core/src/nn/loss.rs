//! Losses, each returning the batch-mean value and the gradient with
//! respect to the prediction.

use alloc::format;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

static ZERO_VECTOR_SEEN: AtomicBool = AtomicBool::new(false);

/// Mean negative log-softmax of the true class.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let n = logits.rows();
    let k = logits.row_len();
    if n == 0 || n != labels.len() {
        return Err(Error::shape(format!(
            "cross entropy over {n} rows with {} labels",
            labels.len()
        )));
    }
    let mut grad = Tensor::zeros(&[n, k]);
    let mut total = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let y = labels[i];
        if y >= k {
            return Err(Error::shape(format!("label {y} out of {k} classes")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| math::exp(v - max)).sum();
        let log_z = max + math::log(sum);
        total += log_z - row[y];
        let g = grad.row_mut(i);
        for j in 0..k {
            g[j] = math::exp(row[j] - log_z) / n as f64;
        }
        g[y] -= 1.0 / n as f64;
    }
    Ok((total / n as f64, grad))
}

/// Row-wise softmax.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = math::exp(*v - max);
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean squared elementwise difference; gradient is taken w.r.t. `prediction`.
pub fn mse(target: &Tensor, prediction: &Tensor) -> Result<(f64, Tensor)> {
    if target.len() != prediction.len() || target.is_empty() {
        return Err(Error::shape(format!(
            "mse between {:?} and {:?}",
            target.shape(),
            prediction.shape()
        )));
    }
    let m = target.len() as f64;
    let mut grad = prediction.clone();
    let mut total = 0.0;
    for (g, t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        total += d * d;
        *g = 2.0 * d / m;
    }
    Ok((total / m, grad))
}

fn note_zero_vector() {
    if !ZERO_VECTOR_SEEN.swap(true, Ordering::Relaxed) {
        log::warn!("cosine distance with a zero vector; treating the pair as orthogonal");
    }
}

/// `1 − a·b / (‖a‖‖b‖)`, in `[0, 2]`. A zero vector counts as orthogonal (distance 1).
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - cosine_similarity(a, b)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let sa: f64 = a.iter().map(|x| x * x).sum();
    let sb: f64 = b.iter().map(|x| x * x).sum();
    if sa == 0.0 || sb == 0.0 {
        note_zero_vector();
        return 0.0;
    }
    // sqrt of the product keeps cos(a, a) exactly 1.
    (dot / math::sqrt(sa * sb)).clamp(-1.0, 1.0)
}

/// Mean cosine distance between paired rows; gradient w.r.t. `prediction`.
/// Rows where either side is zero contribute distance 1 and no gradient.
pub fn cosine_distance_batch(target: &Tensor, prediction: &Tensor) -> Result<(f64, Tensor)> {
    let n = target.rows();
    if n == 0 || prediction.rows() != n || prediction.row_len() != target.row_len() {
        return Err(Error::shape(format!(
            "cosine distance between {:?} and {:?}",
            target.shape(),
            prediction.shape()
        )));
    }
    let mut grad = Tensor::zeros(prediction.shape());
    let mut total = 0.0;
    for i in 0..n {
        let a = target.row(i);
        let b = prediction.row(i);
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = math::sqrt(a.iter().map(|x| x * x).sum());
        let nb = math::sqrt(b.iter().map(|x| x * x).sum());
        if na == 0.0 || nb == 0.0 {
            note_zero_vector();
            total += 1.0;
            continue;
        }
        let cos = dot / (na * nb);
        total += 1.0 - cos;
        // d(1 - cos)/db = -(a / (|a||b|) - cos * b / |b|^2)
        let g = grad.row_mut(i);
        for j in 0..b.len() {
            g[j] = -(a[j] / (na * nb) - cos * b[j] / (nb * nb)) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// Index of the largest entry of each row.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|i| {
            let r = t.row(i);
            let mut best = 0;
            for j in 1..r.len() {
                if r[j] > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
