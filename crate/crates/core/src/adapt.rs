//! Adaptation network: hazy image to preliminary parameter.
//!
//! Two context-gated convolution blocks (stride 2 each) followed by a plain
//! stride-2 3x3 convolution, so the preliminary parameter has `out_channels`
//! channels at an eighth of the input resolution. The gate is a channel-wise
//! sigmoid computed from the globally pooled block input; it scales the
//! convolution output before normalization.

use hazemeta_grad::Var;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Ctx, ParamSet};

/// Which adaptation network, if any, produces the task parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptNet {
    /// No adaptation network: the dehazer runs unconditioned.
    None,
    /// Conv + BN + ReLU blocks without context gates.
    PlainConv,
    /// Context-gated blocks.
    CgConv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub net: AdaptNet,
    /// Output channels of the two gated blocks.
    pub block_channels: [usize; 2],
    /// Channels of the preliminary parameter.
    pub out_channels: usize,
    pub gate_hidden: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            net: AdaptNet::CgConv,
            block_channels: [32, 64],
            out_channels: 64,
            gate_hidden: 16,
        }
    }
}

/// Total spatial stride of [`encode_preliminary`].
pub const ADAPT_STRIDE: usize = 8;

pub fn init_adapt<R: Rng>(ps: &mut ParamSet, cfg: &AdaptConfig, rng: &mut R) {
    if cfg.net == AdaptNet::None {
        return;
    }
    let mut cin = 3;
    for (i, &cout) in cfg.block_channels.iter().enumerate() {
        let name = format!("adapt.block{}", i + 1);
        ps.add_conv(&format!("{name}.conv"), cin, cout, 3, false, rng);
        if cfg.net == AdaptNet::CgConv {
            ps.add_linear(&format!("{name}.gate.fc1"), cin, cfg.gate_hidden, rng);
            ps.add_linear(&format!("{name}.gate.fc2"), cfg.gate_hidden, cout, rng);
        }
        ps.add_batch_norm(&format!("{name}.bn"), cout);
        cin = cout;
    }
    ps.add_conv("adapt.out", cin, cfg.out_channels, 3, true, rng);
}

/// Per-sample, per-channel gates in `(0, 1)` from the pooled input `x`.
pub fn context_gate<'g>(ctx: &Ctx<'g, '_>, x: Var<'g>, name: &str) -> Var<'g> {
    let pooled = x.global_avg_pool();
    let hidden = ctx.linear(pooled, &format!("{name}.fc1")).relu();
    ctx.linear(hidden, &format!("{name}.fc2")).sigmoid()
}

/// `ReLU(BN(Conv(x) * gate(x)))` with stride 2; the gate is skipped when the
/// block has no gate parameters.
pub fn cg_conv_block<'g>(ctx: &Ctx<'g, '_>, x: Var<'g>, name: &str) -> Result<Var<'g>> {
    let w = ctx.param(&format!("{name}.conv.weight"));
    let (k, (h, wd)) = (w.shape()[2], (x.shape()[2], x.shape()[3]));
    if h < k || wd < k {
        return Err(Error::Shape(format!(
            "{name}: {h}x{wd} input is smaller than the {k}x{k} kernel"
        )));
    }
    let mut y = ctx.conv(x, &format!("{name}.conv"), 2);
    let gate = format!("{name}.gate");
    if ctx.has(&format!("{gate}.fc1.weight")) {
        y = y.channel_scale(context_gate(ctx, x, &gate));
    }
    Ok(ctx.batch_norm(y, &format!("{name}.bn")).relu())
}

/// `[n, 3, h, w] -> [n, out_channels, h/8, w/8]`; `h` and `w` must be
/// multiples of [`ADAPT_STRIDE`].
pub fn encode_preliminary<'g>(ctx: &Ctx<'g, '_>, x: Var<'g>) -> Result<Var<'g>> {
    let shape = x.shape();
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::Shape(format!("expected [n, 3, h, w], got {shape:?}")));
    }
    if shape[2] % ADAPT_STRIDE != 0 || shape[3] % ADAPT_STRIDE != 0 {
        return Err(Error::Shape(format!(
            "spatial size {}x{} is not a multiple of {ADAPT_STRIDE}",
            shape[2], shape[3]
        )));
    }
    if !x.value().is_finite() {
        return Err(Error::NonFinite {
            what: "adaptation input".into(),
            detail: "image tensor contains NaN or infinity".into(),
        });
    }
    let mut h = x;
    for i in 1..=2 {
        h = cg_conv_block(ctx, h, &format!("adapt.block{i}"))?;
    }
    Ok(ctx.conv(h, "adapt.out", 2))
}
