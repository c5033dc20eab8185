use std::fmt::Write;

use prer_core::flow::{FlowConfig, FlowLayer, FlowStack};
use prer_core::nn::Parameters;
use prer_core::rng;

use crate::error::Result;

/// Parameter counts and per-level widths of the flow `cfg` builds.
pub fn describe_flow(cfg: &FlowConfig) -> Result<String> {
    let flow = FlowStack::new(cfg, &mut rng::from_seed(0))?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "flow: dim {}, {} level(s), {} block(s) per level, hidden multiplier {}, condition width {}",
        cfg.dim,
        cfg.levels,
        cfg.blocks,
        cfg.hidden_multiplier,
        flow.condition_width()
    );
    for (i, level) in flow.levels().iter().enumerate() {
        let (mut couplings, mut params) = (0, 0);
        for layer in level.layers() {
            if let FlowLayer::Coupling(c) = layer {
                couplings += 1;
                params += c.num_params();
            }
        }
        let _ = writeln!(
            out,
            "level {i}: width {}, emits {}, forwards {}, {couplings} couplings, {params} parameters",
            level.width(),
            level.emitted(),
            level.width() - level.emitted()
        );
    }
    let _ = writeln!(out, "total parameters: {}", flow.num_params());
    Ok(out)
}
