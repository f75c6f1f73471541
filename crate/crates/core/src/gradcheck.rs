//! Finite-difference checks of every hand-differentiated loss and
//! aggregation path, on toy shapes.

use hazemeta_grad::check::{check_gradients, GradCheckConfig, GradCheckReport};
use hazemeta_grad::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregate::{distance_aware_aggregate, NormReduction};
use crate::dcr::{contextual_loss, dcr_loss, ContrastSelection, CxConfig};
use crate::extractor::Extractor;
use crate::losses::{cr_loss, ssim_loss};

/// Channels and side of the toy task parameters.
pub const TOY_CHANNELS: usize = 4;
pub const TOY_SIDE: usize = 3;

#[derive(Clone, Debug)]
pub struct GradCase {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }

    pub fn summary(&self) -> String {
        format!(
            "{:<22} {} max rel err {:.2e} over {} coords ({} kinks skipped)",
            self.name,
            if self.passed() { "PASS" } else { "FAIL" },
            self.report.max_rel_error,
            self.report.checked,
            self.report.kinks
        )
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn unwrap<'g>(v: crate::Result<Var<'g>>) -> Var<'g> {
    v.expect("toy shapes are valid")
}

/// Runs the suite with inputs drawn from `seed`.
pub fn run_suite(seed: u64) -> Vec<GradCase> {
    let cfg = GradCheckConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = [1, TOY_CHANNELS, TOY_SIDE, TOY_SIDE];
    let mut cases = Vec::new();

    let prelims: Vec<Tensor> = (0..3).map(|_| rand_tensor(&mut rng, &phi, -1.0, 1.0)).collect();
    let probe = rand_tensor(&mut rng, &phi, -1.0, 1.0);
    cases.push(GradCase {
        name: "distance_aware_agg",
        report: check_gradients(
            |g: &Graph, v: &[Var]| {
                let tp = distance_aware_aggregate(v, NormReduction::Mean).expect("toy shapes are valid");
                tp.features.mul(g.constant(probe.clone())).sum()
            },
            &prelims,
            cfg,
        ),
    });

    let cx = CxConfig::default();
    let pair = [rand_tensor(&mut rng, &phi, 0.0, 1.0), rand_tensor(&mut rng, &phi, 0.0, 1.0)];
    cases.push(GradCase {
        name: "contextual_loss",
        report: check_gradients(|_: &Graph, v: &[Var]| unwrap(contextual_loss(v[0], v[1], &cx)), &pair, cfg),
    });

    // The positive enters detached, so it is held constant here.
    let positive = rand_tensor(&mut rng, &phi, 0.0, 1.0);
    let free = [rand_tensor(&mut rng, &phi, 0.0, 1.0), rand_tensor(&mut rng, &phi, 0.0, 1.0)];
    let sel = ContrastSelection {
        anchor: 0,
        positive: 1,
        negatives: vec![2],
    };
    cases.push(GradCase {
        name: "dcr_loss",
        report: check_gradients(
            |g: &Graph, v: &[Var]| {
                let params = [v[0], g.constant(positive.clone()), v[1]];
                unwrap(dcr_loss(&sel, &params, &cx, 1e-7))
            },
            &free,
            cfg,
        ),
    });

    let img = [1, 3, 12, 12];
    let ssim_in = [rand_tensor(&mut rng, &img, 0.0, 1.0), rand_tensor(&mut rng, &img, 0.0, 1.0)];
    cases.push(GradCase {
        name: "ssim_loss",
        report: check_gradients(|_: &Graph, v: &[Var]| unwrap(ssim_loss(v[0], v[1])), &ssim_in, cfg),
    });

    // Target and hazy input are detached inside the loss.
    let extractor = Extractor::default();
    let img = [1, 3, 16, 16];
    let pred = [rand_tensor(&mut rng, &img, 0.0, 1.0)];
    let target = rand_tensor(&mut rng, &img, 0.0, 1.0);
    let hazy = rand_tensor(&mut rng, &img, 0.0, 1.0);
    cases.push(GradCase {
        name: "cr_loss",
        report: check_gradients(
            |g: &Graph, v: &[Var]| {
                unwrap(cr_loss(v[0], g.constant(target.clone()), g.constant(hazy.clone()), &extractor))
            },
            &pred,
            cfg,
        ),
    });
    cases
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_covers_every_path() {
        let names: Vec<_> = run_suite(0).iter().map(|c| c.name).collect();
        assert_eq!(
            names,
            ["distance_aware_agg", "contextual_loss", "dcr_loss", "ssim_loss", "cr_loss"]
        );
    }
}
