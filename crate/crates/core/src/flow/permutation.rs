use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Fixed column permutation. Volume preserving, so its log-det is zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl Permutation {
    pub fn random(width: usize, rng: &mut Rng) -> Self {
        let mut forward: Vec<usize> = (0..width).collect();
        forward.shuffle(rng);
        Self::from_indices(forward).expect("shuffled indices form a permutation")
    }

    pub fn identity(width: usize) -> Self {
        Self::from_indices((0..width).collect()).expect("identity")
    }

    /// Output column `i` takes input column `indices[i]`.
    pub fn from_indices(indices: Vec<usize>) -> Result<Self> {
        let n = indices.len();
        let mut inverse = alloc::vec![usize::MAX; n];
        for (i, &j) in indices.iter().enumerate() {
            if j >= n || inverse[j] != usize::MAX {
                return Err(Error::config("indices do not form a permutation"));
            }
            inverse[j] = i;
        }
        Ok(Self {
            forward: indices,
            inverse,
        })
    }

    pub fn width(&self) -> usize {
        self.forward.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.forward
    }

    fn gather(x: &Tensor, idx: &[usize]) -> Tensor {
        let mut out = Tensor::zeros(x.shape());
        for i in 0..x.rows() {
            let src = x.row(i);
            let dst = out.row_mut(i);
            for (d, &j) in dst.iter_mut().zip(idx) {
                *d = src[j];
            }
        }
        out
    }

    /// Applies the permutation (normalizing direction).
    pub fn apply(&self, x: &Tensor) -> Tensor {
        Self::gather(x, &self.forward)
    }

    /// Applies the inverse permutation (generating direction, and backprop).
    pub fn invert(&self, x: &Tensor) -> Tensor {
        Self::gather(x, &self.inverse)
    }
}
