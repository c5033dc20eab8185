use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::model::Conditioning;
use crate::tensor::Tensor;

/// Generated rehearsal set: images `x̂ = D(z)` and the classification
/// embeddings `ẑ = E_c(x̂)` recorded when they were made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMemory {
    /// Task at whose start the memory was generated.
    pub task: usize,
    pub images: Tensor,
    pub embeddings: Tensor,
    /// Global class of each tuple: the requested condition, or the probe's
    /// assignment for unconditioned sampling.
    pub classes: Vec<usize>,
    pub conditioning: Conditioning,
}

impl SyntheticMemory {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Real samples kept from one finished task (Replay and ER).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTask {
    pub task: usize,
    pub first_class: usize,
    pub images: Tensor,
    /// Global labels.
    pub labels: Vec<usize>,
    /// `E_c` of the images at the end of the task (ER only).
    pub embeddings: Option<Tensor>,
}

impl StoredTask {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}
