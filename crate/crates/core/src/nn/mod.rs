//! Minimal differentiable network substrate: layers with hand-written
//! backward passes, losses and Adam.

pub mod adam;
pub mod layer;
pub mod loss;
pub mod network;

pub use adam::Adam;
pub use layer::{Conv2d, Dense, Dropout, Layer, Padding};
pub use network::{mlp, Mode, Network};

use crate::tensor::Tensor;

/// Anything holding trainable `(parameter, gradient)` pairs.
pub trait Parameters {
    /// Visits every parameter with its gradient buffer, in a fixed order.
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Tensor, &mut Tensor));

    fn num_params(&self) -> usize;

    fn zero_grad(&mut self) {
        self.visit_params(&mut |_, g| g.fill(0.0));
    }
}
