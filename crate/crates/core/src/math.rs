//! Scalar math routed through `libm` so results do not depend on the host libm.

pub use libm::{exp, log, sqrt, tanh};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log-density of the standard normal summed over `u`.
pub fn std_normal_log_density(u: &[f64]) -> f64 {
    let sq: f64 = u.iter().map(|v| v * v).sum();
    -0.5 * sq - 0.5 * LN_2PI * u.len() as f64
}
