//! Conditional encoder/decoder dehazer.
//!
//! Three stride-2 encoder stages, a bottleneck conditioned on the task
//! parameter followed by residual blocks, and three decoder stages that
//! upsample and add the matching encoder features. The network predicts a
//! correction that is added to the hazy input.

use hazemeta_grad::Var;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Ctx, ParamSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    /// Channels of the full-resolution stage; deeper stages use 2x and 4x.
    pub base_width: usize,
    pub res_blocks: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            base_width: 16,
            res_blocks: 4,
        }
    }
}

/// Total spatial stride of the encoder.
pub const BACKBONE_STRIDE: usize = 8;

/// Registers all backbone weights; `phi_channels` is `None` for the
/// unconditioned variant.
pub fn init_backbone<R: Rng>(ps: &mut ParamSet, cfg: &BackboneConfig, phi_channels: Option<usize>, rng: &mut R) {
    let w = cfg.base_width;
    let (w2, w4) = (2 * w, 4 * w);
    ps.add_conv("backbone.head", 3, w, 3, true, rng);
    ps.add_conv("backbone.enc1", w, w2, 3, true, rng);
    ps.add_conv("backbone.enc2", w2, w4, 3, true, rng);
    ps.add_conv("backbone.enc3", w4, w4, 3, true, rng);
    for i in 0..cfg.res_blocks {
        ps.add_conv(&format!("backbone.res{i}.conv1"), w4, w4, 3, true, rng);
        ps.add_conv(&format!("backbone.res{i}.conv2"), w4, w4, 3, true, rng);
    }
    ps.add_conv("backbone.dec3", w4, w4, 3, true, rng);
    ps.add_conv("backbone.dec2", w4, w2, 3, true, rng);
    ps.add_conv("backbone.dec1", w2, w, 3, true, rng);
    ps.add_conv("backbone.tail", w, 3, 3, true, rng);
    // Start at the identity mapping with an unperturbed residual stream.
    ps.scale_prefix("backbone.tail", 0.0);
    for i in 0..cfg.res_blocks {
        ps.scale_prefix(&format!("backbone.res{i}.conv2"), 0.0);
    }
    // Drawn last so the shared layers match the unconditioned variant.
    if let Some(c) = phi_channels {
        ps.add_conv("backbone.fuse", w4 + c, w4, 1, true, rng);
        ps.scale_prefix("backbone.fuse", 0.0);
    }
}

/// Resizes `phi` to the bottleneck, concatenates on channels, projects back
/// with a 1x1 convolution and adds the result to `bottleneck`.
pub fn condition_fuse<'g>(ctx: &Ctx<'g, '_>, bottleneck: Var<'g>, phi: Var<'g>) -> Result<Var<'g>> {
    let (b, p) = (bottleneck.shape(), phi.shape());
    if b.len() != 4 || p.len() != 4 || b[0] != p[0] {
        return Err(Error::Shape(format!(
            "cannot condition bottleneck {b:?} on task parameter {p:?}"
        )));
    }
    let phi = phi.resize_bilinear(b[2], b[3]);
    let proj = ctx.conv(bottleneck.concat_channels(phi), "backbone.fuse", 1);
    Ok(bottleneck.add(proj))
}

fn check_finite(v: Var<'_>, layer: &str) -> Result<()> {
    if v.value().is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: format!("backbone activation after {layer}"),
            detail: "NaN or infinity".into(),
        })
    }
}

/// Raw restoration `x + residual` for `[n, 3, h, w]` inputs whose sides are
/// multiples of [`BACKBONE_STRIDE`]. `phi` holds one task parameter per
/// sample, or is `None` for the unconditioned variant.
pub fn dehaze<'g>(ctx: &Ctx<'g, '_>, x: Var<'g>, phi: Option<Var<'g>>) -> Result<Var<'g>> {
    let s = x.shape();
    if s.len() != 4 || s[1] != 3 || s[2] % BACKBONE_STRIDE != 0 || s[3] % BACKBONE_STRIDE != 0 {
        return Err(Error::Shape(format!(
            "dehaze expects [n, 3, h, w] with sides divisible by {BACKBONE_STRIDE}, got {s:?}"
        )));
    }
    let head = ctx.conv(x, "backbone.head", 1).relu();
    let e1 = ctx.conv(head, "backbone.enc1", 2).relu();
    let e2 = ctx.conv(e1, "backbone.enc2", 2).relu();
    let mut h = ctx.conv(e2, "backbone.enc3", 2).relu();
    check_finite(h, "encoder")?;
    if let Some(phi) = phi {
        h = condition_fuse(ctx, h, phi)?;
    }
    let mut i = 0;
    while ctx.has(&format!("backbone.res{i}.conv1.weight")) {
        let r = ctx.conv(h, &format!("backbone.res{i}.conv1"), 1).relu();
        h = h.add(ctx.conv(r, &format!("backbone.res{i}.conv2"), 1));
        i += 1;
    }
    check_finite(h, "bottleneck")?;
    let d3 = ctx.conv(h, "backbone.dec3", 1).relu().upsample_nearest2x().add(e2);
    let d2 = ctx.conv(d3, "backbone.dec2", 1).relu().upsample_nearest2x().add(e1);
    let d1 = ctx.conv(d2, "backbone.dec1", 1).relu().upsample_nearest2x().add(head);
    let out = x.add(ctx.conv(d1, "backbone.tail", 1));
    check_finite(out, "decoder")?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use hazemeta_grad::{Graph, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_width_stays_under_two_million_parameters() {
        let mut ps = ParamSet::new();
        let cfg = BackboneConfig {
            base_width: 32,
            ..BackboneConfig::default()
        };
        init_backbone(&mut ps, &cfg, Some(64), &mut ChaCha8Rng::seed_from_u64(0));
        let n = ps.num_scalars("backbone.");
        assert!(n < 2_000_000, "{n}");
    }

    #[test]
    fn fresh_fusion_is_identity() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        init_backbone(&mut ps, &BackboneConfig::default(), Some(4), &mut rng);
        let g = Graph::no_grad();
        let ctx = Ctx::new(&g, &ps, Mode::Eval);
        let b = g.constant(Tensor::from_fn(&[1, 64, 2, 2], |i| i as f64 * 0.1));
        let phi = g.constant(Tensor::from_fn(&[1, 4, 3, 3], |i| i as f64));
        let out = condition_fuse(&ctx, b, phi).unwrap();
        assert_eq!(*out.value(), *b.value());
    }

    #[test]
    fn rejects_sides_not_divisible_by_stride() {
        let mut ps = ParamSet::new();
        init_backbone(&mut ps, &BackboneConfig::default(), None, &mut ChaCha8Rng::seed_from_u64(2));
        let g = Graph::no_grad();
        let ctx = Ctx::new(&g, &ps, Mode::Eval);
        assert!(dehaze(&ctx, g.constant(Tensor::zeros(&[1, 3, 20, 16])), None).is_err());
        let y = dehaze(&ctx, g.constant(Tensor::zeros(&[2, 3, 16, 24])), None).unwrap();
        assert_eq!(y.shape(), vec![2, 3, 16, 24]);
    }
}
