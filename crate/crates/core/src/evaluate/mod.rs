//! Full-reference metrics on held-out synthetic domains and a dark-channel
//! haze-density proxy.

pub mod ablation;
mod plot;

use std::path::Path;

use hazemeta_grad::Graph;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use plot::line_chart_svg;

use crate::config::EvalConfig;
use crate::datagen::{make_task, synthesize_hazy, DomainSpec, SceneBank};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::ssim_per_sample;
use crate::trainer::Dehazer;

/// Value reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

fn same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "images are {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// `10 log10(1 / MSE)` on the unit range, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean SSIM over all valid 11x11 windows and channels.
pub fn ssim_metric(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b)?;
    let g = Graph::no_grad();
    let s = ssim_per_sample(g.constant(a.to_tensor()), g.constant(b.to_tensor()))?;
    Ok(s.item())
}

/// Mean over pixels of the minimum over a `patch x patch` neighbourhood and
/// the three channels. Patches larger than the image are shrunk to fit.
pub fn dark_channel_mean(img: &Image, patch: usize) -> Result<f64> {
    if patch == 0 || patch % 2 == 0 {
        return Err(Error::InvalidInput(format!("patch {patch} must be odd and >= 1")));
    }
    let (h, w) = img.dims();
    let r = patch.min(h).min(w) / 2;
    let mut dark: Vec<f64> = (0..h * w)
        .map(|i| (0..3).map(|c| img.channel(c)[i]).fold(f64::INFINITY, f64::min))
        .collect();
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
            tmp[y * w + x] = dark[y * w + lo..=y * w + hi].iter().copied().fold(f64::INFINITY, f64::min);
        }
    }
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            dark[y * w + x] = (lo..=hi).map(|yy| tmp[yy * w + x]).fold(f64::INFINITY, f64::min);
        }
    }
    Ok(dark.iter().sum::<f64>() / dark.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainMetrics {
    pub domain_id: usize,
    pub n_images: usize,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
    pub dark_channel_mean: f64,
    /// The same metrics for the unprocessed hazy inputs.
    pub hazy_psnr_mean: f64,
    pub hazy_ssim_mean: f64,
    pub hazy_dark_channel_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub seed: u64,
    pub config_hash: String,
    pub domains: Vec<DomainMetrics>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "domain_id,n_images,psnr_mean,ssim_mean,dark_channel_mean,hazy_psnr_mean,hazy_ssim_mean,hazy_dark_channel_mean\n",
        );
        for d in &self.domains {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                d.domain_id,
                d.n_images,
                d.psnr_mean,
                d.ssim_mean,
                d.dark_channel_mean,
                d.hazy_psnr_mean,
                d.hazy_ssim_mean,
                d.hazy_dark_channel_mean
            ));
        }
        out
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        for (ext, body) in [("json", json), ("csv", self.to_csv())] {
            let p = dir.join(format!("{stem}.{ext}"));
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn mean_psnr(&self) -> f64 {
        self.domains.iter().map(|d| d.psnr_mean).sum::<f64>() / self.domains.len().max(1) as f64
    }
}

/// One evaluation image: the hazy input, its clear target and same-domain
/// hazy context images.
#[derive(Clone, Debug)]
pub struct EvalCase {
    pub hazy: Image,
    pub clear: Image,
    pub context: Vec<Image>,
}

/// Deterministic test cases for `domain`. The scenes come from a stream of
/// `cfg.seed` that training never touches; every domain sees the same
/// scenes under its own haze.
pub fn eval_cases(domain: &DomainSpec, scene: &crate::datagen::SceneConfig, cfg: &EvalConfig) -> Result<Vec<EvalCase>> {
    let mut scene_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    scene_rng.set_stream(7);
    let bank = SceneBank::generate(scene, cfg.n_images, &mut scene_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ domain.rng_seed.rotate_left(17));
    rng.set_stream(8);
    bank.scenes()
        .iter()
        .map(|s| {
            let (beta, a) = domain.draw_haze(&mut rng);
            let depth = s.depth.scaled(domain.depth_bias)?;
            let hazy = synthesize_hazy(&s.clear, &depth, beta, a)?;
            let context = if cfg.context_size == 0 {
                Vec::new()
            } else {
                make_task(domain, &bank, cfg.context_size, &mut rng)?
                    .pairs
                    .into_iter()
                    .map(|p| p.hazy)
                    .collect()
            };
            Ok(EvalCase {
                hazy,
                clear: s.clear.clone(),
                context,
            })
        })
        .collect()
}

/// Restores every case of every domain and averages the metrics.
pub fn evaluate_model(dehazer: &Dehazer, domains: &[DomainSpec], cfg: &EvalConfig, checkpoint: &str) -> Result<EvalReport> {
    let mut out = Vec::with_capacity(domains.len());
    for d in domains {
        let cases = eval_cases(d, &dehazer.cfg.data.scene, cfg)?;
        let mut sums = [0.0; 6];
        for c in &cases {
            let restored = dehazer.dehaze(&c.hazy, &c.context)?;
            let vals = [
                psnr(&restored, &c.clear)?,
                ssim_metric(&restored, &c.clear)?,
                dark_channel_mean(&restored, cfg.dark_channel_patch)?,
                psnr(&c.hazy, &c.clear)?,
                ssim_metric(&c.hazy, &c.clear)?,
                dark_channel_mean(&c.hazy, cfg.dark_channel_patch)?,
            ];
            for (s, v) in sums.iter_mut().zip(vals) {
                *s += v;
            }
        }
        let n = cases.len() as f64;
        out.push(DomainMetrics {
            domain_id: d.id,
            n_images: cases.len(),
            psnr_mean: sums[0] / n,
            ssim_mean: sums[1] / n,
            dark_channel_mean: sums[2] / n,
            hazy_psnr_mean: sums[3] / n,
            hazy_ssim_mean: sums[4] / n,
            hazy_dark_channel_mean: sums[5] / n,
        });
    }
    Ok(EvalReport {
        checkpoint: checkpoint.to_string(),
        seed: cfg.seed,
        config_hash: dehazer.cfg.hash(),
        domains: out,
    })
}

/// Loads a checkpoint and evaluates it on `domains`.
pub fn evaluate_checkpoint(path: &Path, domains: &[DomainSpec], cfg: &EvalConfig) -> Result<EvalReport> {
    let dehazer = Dehazer::from_checkpoint(path)?;
    evaluate_model(&dehazer, domains, cfg, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(f: impl Fn(usize, usize, usize) -> f64) -> Image {
        Image::from_fn(16, 16, f).unwrap()
    }

    #[test]
    fn psnr_reference_values() {
        let a = img(|_, _, _| 0.2);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = img(|_, _, _| 0.3);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let zero = img(|_, _, _| 0.0);
        let one = img(|_, _, _| 1.0);
        assert_eq!(psnr(&zero, &one).unwrap(), 0.0);
    }

    #[test]
    fn dark_channel_extremes() {
        assert_eq!(dark_channel_mean(&img(|_, _, _| 0.0), 15).unwrap(), 0.0);
        assert_eq!(dark_channel_mean(&img(|_, _, _| 1.0), 15).unwrap(), 1.0);
        let one_dark = img(|c, y, x| if c == 1 { 0.0 } else { (x + y) as f64 / 40.0 });
        assert_eq!(dark_channel_mean(&one_dark, 3).unwrap(), 0.0);
        assert_eq!(dark_channel_mean(&one_dark, 99).unwrap(), 0.0);
        assert!(dark_channel_mean(&one_dark, 4).is_err());
    }

    #[test]
    fn dark_channel_single_pixel_patch_is_channel_min() {
        let im = img(|c, y, x| ((c + 2 * y + 3 * x) % 7) as f64 / 7.0);
        let expect: f64 = (0..256)
            .map(|i| (0..3).map(|c| im.channel(c)[i]).fold(1.0, f64::min))
            .sum::<f64>()
            / 256.0;
        assert!((dark_channel_mean(&im, 1).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = img(|c, y, x| ((c * 5 + y * 3 + x) % 11) as f64 / 10.0);
        let b = img(|c, y, x| ((c + y + 2 * x) % 5) as f64 / 4.0);
        assert!((ssim_metric(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim_metric(&a, &b).unwrap(), ssim_metric(&b, &a).unwrap());
        let bin = img(|_, y, x| ((x / 4 + y / 4) % 2) as f64);
        let inv = img(|_, y, x| 1.0 - ((x / 4 + y / 4) % 2) as f64);
        assert!(ssim_metric(&bin, &inv).unwrap() < 1.0);
    }
}
