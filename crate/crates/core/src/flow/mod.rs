//! Conditional normalizing flow over embeddings.

pub mod batchnorm;
pub mod coupling;
pub mod permutation;
pub mod stack;

pub use batchnorm::InvertibleBatchNorm;
pub use coupling::CouplingLayer;
pub use permutation::Permutation;
pub use stack::{level_widths, FlowConfig, FlowLayer, FlowStack, Level};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Embedding → prior.
    Normalizing,
    /// Prior → embedding.
    Generating,
}
