//! Training losses and their weighted combination.
//!
//! `total = pixel + l1 * ssim + l2 * cr + l3 * ce + l4 * dcr`.

use hazemeta_grad::Var;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::{Extractor, LEVEL_WEIGHTS};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Guards the contrastive ratio when the restoration equals the hazy input.
pub const CR_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// SSIM term.
    pub lambda1: f64,
    /// Contrastive perceptual term.
    pub lambda2: f64,
    /// Domain cross-entropy term.
    pub lambda3: f64,
    /// Domain-relevant contrastive term.
    pub lambda4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.5,
            lambda2: 0.1,
            lambda3: 1.0,
            lambda4: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("loss.{k}"), format!("{v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// How the per-sample L1 pixel distance is reduced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelReduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pixel: f64,
    pub ssim: f64,
    pub cr: f64,
    pub ce: f64,
    pub dcr: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Weighted total of already evaluated components.
    pub fn compose(pixel: f64, ssim: f64, cr: f64, ce: f64, dcr: f64, w: &LossWeights) -> Result<Self> {
        for (what, v) in [("pixel", pixel), ("ssim", ssim), ("cr", cr), ("ce", ce), ("dcr", dcr)] {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("{what} loss"),
                    detail: format!("pixel={pixel} ssim={ssim} cr={cr} ce={ce} dcr={dcr}"),
                });
            }
        }
        Ok(Self {
            pixel,
            ssim,
            cr,
            ce,
            dcr,
            total: pixel + w.lambda1 * ssim + w.lambda2 * cr + w.lambda3 * ce + w.lambda4 * dcr,
        })
    }

    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        self.pixel + w.lambda1 * self.ssim + w.lambda2 * self.cr + w.lambda3 * self.ce + w.lambda4 * self.dcr
    }
}

fn same_shape(a: Var<'_>, b: Var<'_>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean over samples of the per-sample L1 distance.
pub fn pixel_loss<'g>(pred: Var<'g>, target: Var<'g>, reduction: PixelReduction) -> Result<Var<'g>> {
    same_shape(pred, target, "pixel loss")?;
    let per_sample = pred.sub(target).abs().mean_per_sample();
    Ok(match reduction {
        PixelReduction::Mean => per_sample.mean(),
        PixelReduction::Sum => {
            let inner = pred.value().len() / pred.shape()[0];
            per_sample.mean().mul_scalar(inner as f64)
        }
    })
}

pub fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Mean SSIM of each sample of two `[n, c, h, w]` batches over all valid
/// 11x11 windows and channels.
pub fn ssim_per_sample<'g>(a: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
    same_shape(a, b, "ssim")?;
    let s = a.shape();
    if s.len() != 4 || s[2] < SSIM_WINDOW || s[3] < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs [n, c, h, w] with h, w >= {SSIM_WINDOW}, got {s:?}"
        )));
    }
    let k = gaussian_window();
    let blur = |v: Var<'g>| v.separable_filter_valid(&k);
    let (mu_a, mu_b) = (blur(a), blur(b));
    let (mu_aa, mu_bb, mu_ab) = (mu_a.square(), mu_b.square(), mu_a.mul(mu_b));
    let var_a = blur(a.square()).sub(mu_aa);
    let var_b = blur(b.square()).sub(mu_bb);
    let cov = blur(a.mul(b)).sub(mu_ab);
    let num = mu_ab
        .mul_scalar(2.0)
        .add_scalar(SSIM_C1)
        .mul(cov.mul_scalar(2.0).add_scalar(SSIM_C2));
    let den = mu_aa
        .add(mu_bb)
        .add_scalar(SSIM_C1)
        .mul(var_a.add(var_b).add_scalar(SSIM_C2));
    Ok(num.div(den).mean_per_sample())
}

/// Mean over samples of `1 - SSIM`.
pub fn ssim_loss<'g>(pred: Var<'g>, target: Var<'g>) -> Result<Var<'g>> {
    Ok(ssim_per_sample(pred, target)?.mean().neg().add_scalar(1.0))
}

/// Contrastive perceptual loss: at every extractor level, the distance to
/// the clear target over the distance to the hazy input, weighted per level
/// and averaged over samples.
pub fn cr_loss<'g>(pred: Var<'g>, target: Var<'g>, hazy: Var<'g>, extractor: &Extractor) -> Result<Var<'g>> {
    same_shape(pred, target, "cr loss")?;
    same_shape(pred, hazy, "cr loss")?;
    let fp = extractor.features(pred);
    let ft = extractor.features(target.detach());
    let fh = extractor.features(hazy.detach());
    let mut total: Option<Var<'g>> = None;
    for (s, &alpha) in LEVEL_WEIGHTS.iter().enumerate() {
        let num = ft[s].sub(fp[s]).abs().mean_per_sample();
        let den = fh[s].sub(fp[s]).abs().mean_per_sample().add_scalar(CR_EPS);
        let term = num.div(den).mul_scalar(alpha);
        total = Some(match total {
            Some(t) => t.add(term),
            None => term,
        });
    }
    Ok(total.expect("extractor has levels").mean())
}

/// `-(1/N) sum_i ln p_i[label_i]` with probabilities clamped at `1e-12`.
pub fn ce_loss<'g>(probs: Var<'g>, labels: &[usize]) -> Result<Var<'g>> {
    let s = probs.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::Shape(format!(
            "{} labels for probabilities of shape {s:?}",
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= s[1]) {
        return Err(Error::InvalidInput(format!("label {l} out of {} domains", s[1])));
    }
    Ok(probs.pick_rows(labels).ln_clamped(1e-12).mean().neg())
}

/// Differentiable components of one step. Missing terms count as zero.
pub struct LossTerms<'g> {
    pub pixel: Var<'g>,
    pub ssim: Var<'g>,
    pub cr: Var<'g>,
    pub ce: Option<Var<'g>>,
    pub dcr: Option<Var<'g>>,
}

pub fn total_loss<'g>(terms: &LossTerms<'g>, w: &LossWeights) -> Result<(Var<'g>, LossBreakdown)> {
    let val = |v: Option<Var<'g>>| v.map_or(0.0, |v| v.item());
    let breakdown = LossBreakdown::compose(
        terms.pixel.item(),
        terms.ssim.item(),
        terms.cr.item(),
        val(terms.ce),
        val(terms.dcr),
        w,
    )?;
    let mut total = terms
        .pixel
        .add(terms.ssim.mul_scalar(w.lambda1))
        .add(terms.cr.mul_scalar(w.lambda2));
    if let Some(ce) = terms.ce {
        total = total.add(ce.mul_scalar(w.lambda3));
    }
    if let Some(dcr) = terms.dcr {
        total = total.add(dcr.mul_scalar(w.lambda4));
    }
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use hazemeta_grad::{Graph, Tensor};

    #[test]
    fn window_is_normalized_and_symmetric() {
        let k = gaussian_window();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(k[i], k[SSIM_WINDOW - 1 - i]);
        }
    }

    #[test]
    fn unit_components_total_three_point_one() {
        let b = LossBreakdown::compose(1.0, 1.0, 1.0, 1.0, 1.0, &LossWeights::default()).unwrap();
        assert!((b.total - 3.1).abs() < 1e-12);
        let zero = LossBreakdown::compose(0.0, 0.0, 0.0, 0.0, 0.0, &LossWeights::default()).unwrap();
        assert_eq!(zero.total, 0.0);
    }

    #[test]
    fn non_finite_component_is_named() {
        let err = LossBreakdown::compose(0.1, f64::NAN, 0.0, 0.0, 0.0, &LossWeights::default()).unwrap_err();
        assert!(err.to_string().contains("ssim"));
    }

    #[test]
    fn pixel_offset() {
        let g = Graph::no_grad();
        let a = g.constant(Tensor::full(&[2, 3, 4, 4], 0.3));
        let b = g.constant(Tensor::full(&[2, 3, 4, 4], 0.4));
        let l = pixel_loss(a, b, PixelReduction::Mean).unwrap().item();
        assert!((l - 0.1).abs() < 1e-12);
        let s = pixel_loss(a, b, PixelReduction::Sum).unwrap().item();
        assert!((s - 4.8).abs() < 1e-9);
    }

    #[test]
    fn ce_of_uniform_predictions() {
        let g = Graph::no_grad();
        let two = g.constant(Tensor::full(&[3, 2], 0.5));
        assert!((ce_loss(two, &[0, 1, 1]).unwrap().item() - 2f64.ln()).abs() < 1e-12);
        let four = g.constant(Tensor::full(&[1, 4], 0.25));
        assert!((ce_loss(four, &[3]).unwrap().item() - 4f64.ln()).abs() < 1e-12);
        let onehot = g.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        assert_eq!(ce_loss(onehot, &[0, 1]).unwrap().item(), 0.0);
        assert!(ce_loss(onehot, &[0, 1, 0]).is_err());
    }

    #[test]
    fn ssim_rejects_small_images() {
        let g = Graph::no_grad();
        let a = g.constant(Tensor::zeros(&[1, 1, 10, 12]));
        assert!(ssim_loss(a, a).is_err());
    }
}
