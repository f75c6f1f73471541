mod common;

use common::random_tensor;
use hazemeta::extractor::{Extractor, LEVEL_WEIGHTS};
use hazemeta::losses::{
    ce_loss, cr_loss, gaussian_window, pixel_loss, ssim_loss, ssim_per_sample, total_loss, LossBreakdown, LossTerms,
    LossWeights, PixelReduction, SSIM_C1, SSIM_C2, SSIM_WINDOW,
};
use hazemeta::Error;
use hazemeta_grad::{Graph, Tensor};
use proptest::prelude::*;

/// SSIM of one `[c, h, w]` sample with an explicit 2-D window sum.
fn oracle_ssim(a: &[f64], b: &[f64], c: usize, h: usize, w: usize) -> f64 {
    let k = gaussian_window();
    let n = SSIM_WINDOW;
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut total = 0.0;
    for ch in 0..c {
        let at = |img: &[f64], y: usize, x: usize| img[ch * h * w + y * w + x];
        for y0 in 0..oh {
            for x0 in 0..ow {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..n {
                    for dx in 0..n {
                        let wt = k[dy] * k[dx];
                        let (p, q) = (at(a, y0 + dy, x0 + dx), at(b, y0 + dy, x0 + dx));
                        ma += wt * p;
                        mb += wt * q;
                        saa += wt * p * p;
                        sbb += wt * q * q;
                        sab += wt * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            }
        }
    }
    total / (c * oh * ow) as f64
}

#[test]
fn ssim_matches_window_oracle() {
    let shape = [2, 3, 14, 13];
    let a = random_tensor(1, &shape, 0.0, 1.0);
    let b = random_tensor(2, &shape, 0.0, 1.0);
    let g = Graph::no_grad();
    let got = ssim_per_sample(g.constant(a.clone()), g.constant(b.clone())).unwrap().value();
    let per = 3 * 14 * 13;
    for i in 0..2 {
        let e = oracle_ssim(&a.data()[i * per..(i + 1) * per], &b.data()[i * per..(i + 1) * per], 3, 14, 13);
        assert!((got.data()[i] - e).abs() < 1e-12, "{} vs {e}", got.data()[i]);
    }
}

#[test]
fn ssim_loss_is_zero_on_identity_and_positive_off_it() {
    let g = Graph::no_grad();
    let a = g.constant(Tensor::full(&[1, 3, 16, 16], 0.5));
    assert!(ssim_loss(a, a).unwrap().item().abs() < 1e-12);
    let b = g.constant(random_tensor(3, &[1, 3, 16, 16], 0.49, 0.51));
    assert!(ssim_loss(a, b).unwrap().item() > 0.0);
}

#[test]
fn ssim_rejects_small_images() {
    let g = Graph::no_grad();
    let a = g.constant(Tensor::zeros(&[1, 3, 10, 16]));
    assert!(matches!(ssim_loss(a, a), Err(Error::Shape(_))));
}

#[test]
fn pixel_offset_and_symmetry() {
    let g = Graph::no_grad();
    let a = random_tensor(4, &[2, 3, 8, 8], 0.0, 0.8);
    let b = a.map(|x| x + 0.1);
    let (va, vb) = (g.constant(a), g.constant(b));
    assert!((pixel_loss(va, vb, PixelReduction::Mean).unwrap().item() - 0.1).abs() < 1e-12);
    assert_eq!(pixel_loss(va, va, PixelReduction::Mean).unwrap().item(), 0.0);
    let c = g.constant(random_tensor(5, &[2, 3, 8, 8], 0.0, 1.0));
    assert_eq!(
        pixel_loss(va, c, PixelReduction::Mean).unwrap().item(),
        pixel_loss(c, va, PixelReduction::Mean).unwrap().item()
    );
    assert!((pixel_loss(va, vb, PixelReduction::Sum).unwrap().item() - 0.1 * 192.0).abs() < 1e-9);
    let bad = g.constant(Tensor::zeros(&[2, 3, 8, 7]));
    assert!(pixel_loss(va, bad, PixelReduction::Mean).is_err());
}

#[test]
fn cr_level_weights_sum_when_ratios_are_one() {
    assert_eq!(LEVEL_WEIGHTS.iter().sum::<f64>(), 47.0 / 32.0);
    let g = Graph::no_grad();
    let ex = Extractor::default();
    let pred = g.constant(random_tensor(6, &[2, 3, 16, 16], 0.0, 0.2));
    // Target equal to the hazy input makes numerator and denominator agree.
    let other = g.constant(random_tensor(7, &[2, 3, 16, 16], 0.8, 1.0));
    let v = cr_loss(pred, other, other, &ex).unwrap().item();
    assert!((v - 1.46875).abs() < 1e-6, "{v}");
}

#[test]
fn cr_matches_level_oracle() {
    let g = Graph::no_grad();
    let ex = Extractor::default();
    let shape = [2, 3, 16, 16];
    let (p, y, x) = (
        random_tensor(10, &shape, 0.0, 1.0),
        random_tensor(11, &shape, 0.0, 1.0),
        random_tensor(12, &shape, 0.0, 1.0),
    );
    let feats = |t: &Tensor| -> Vec<Tensor> { ex.features(g.constant(t.clone())).iter().map(|v| (*v.value()).clone()).collect() };
    let (fp, fy, fx) = (feats(&p), feats(&y), feats(&x));
    let mut expect = 0.0;
    for n in 0..2 {
        for s in 0..LEVEL_WEIGHTS.len() {
            let per = fp[s].len() / 2;
            let l1 = |a: &Tensor, b: &Tensor| {
                a.data()[n * per..(n + 1) * per]
                    .iter()
                    .zip(&b.data()[n * per..(n + 1) * per])
                    .map(|(u, v)| (u - v).abs())
                    .sum::<f64>()
                    / per as f64
            };
            expect += LEVEL_WEIGHTS[s] * l1(&fy[s], &fp[s]) / (l1(&fx[s], &fp[s]) + hazemeta::losses::CR_EPS);
        }
    }
    expect /= 2.0;
    let got = cr_loss(g.constant(p), g.constant(y), g.constant(x), &ex).unwrap().item();
    assert!((got - expect).abs() < 1e-12 * expect.max(1.0), "{got} vs {expect}");
}

#[test]
fn cr_is_zero_when_prediction_hits_target() {
    let g = Graph::no_grad();
    let ex = Extractor::default();
    let y = g.constant(random_tensor(8, &[1, 3, 16, 16], 0.0, 1.0));
    let x = g.constant(random_tensor(9, &[1, 3, 16, 16], 0.0, 1.0));
    assert_eq!(cr_loss(y, y, x, &ex).unwrap().item(), 0.0);
    assert_eq!(cr_loss(y, y, y, &ex).unwrap().item(), 0.0);
}

#[test]
fn ce_uniform_and_one_hot() {
    let g = Graph::no_grad();
    let two = g.constant(Tensor::full(&[3, 2], 0.5));
    assert!((ce_loss(two, &[0, 1, 1]).unwrap().item() - 2f64.ln()).abs() < 1e-12);
    let four = g.constant(Tensor::full(&[2, 4], 0.25));
    assert!((ce_loss(four, &[3, 0]).unwrap().item() - 4f64.ln()).abs() < 1e-12);
    let hot = g.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
    assert_eq!(ce_loss(hot, &[0, 1]).unwrap().item(), 0.0);
    let zero = ce_loss(hot, &[1, 0]).unwrap().item();
    assert!((zero - (1e12f64).ln()).abs() < 1e-9);
    assert!(matches!(ce_loss(hot, &[0, 2]), Err(Error::InvalidInput(_))));
}

#[test]
fn defaults_and_unit_total() {
    let w = LossWeights::default();
    assert_eq!((w.lambda1, w.lambda2, w.lambda3, w.lambda4), (0.5, 0.1, 1.0, 0.5));
    let b = LossBreakdown::compose(1.0, 1.0, 1.0, 1.0, 1.0, &w).unwrap();
    assert!((b.total - 3.1).abs() < 1e-12);
}

#[test]
fn non_finite_component_is_named() {
    let err = LossBreakdown::compose(0.0, 0.0, f64::NAN, 0.0, 0.0, &LossWeights::default()).unwrap_err();
    assert!(err.to_string().contains("cr"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn total_is_the_weighted_sum(
        parts in prop::array::uniform5(0.0f64..10.0),
        l in prop::array::uniform4(0.0f64..2.0),
        with_ce in any::<bool>(),
        with_dcr in any::<bool>(),
    ) {
        let w = LossWeights { lambda1: l[0], lambda2: l[1], lambda3: l[2], lambda4: l[3] };
        let g = Graph::no_grad();
        let s = |v: f64| g.constant(Tensor::scalar(v));
        let terms = LossTerms {
            pixel: s(parts[0]),
            ssim: s(parts[1]),
            cr: s(parts[2]),
            ce: with_ce.then(|| s(parts[3])),
            dcr: with_dcr.then(|| s(parts[4])),
        };
        let (var, b) = total_loss(&terms, &w).unwrap();
        let ce = if with_ce { parts[3] } else { 0.0 };
        let dcr = if with_dcr { parts[4] } else { 0.0 };
        let expect = parts[0] + l[0] * parts[1] + l[1] * parts[2] + l[2] * ce + l[3] * dcr;
        prop_assert!((var.item() - expect).abs() < 1e-9);
        prop_assert!((b.total - expect).abs() < 1e-9);
        prop_assert!((b.weighted_sum(&w) - b.total).abs() < 1e-12);
    }

    #[test]
    fn image_losses_are_bounded(sa in 0u64..1000, sb in 0u64..1000) {
        let g = Graph::no_grad();
        let a = g.constant(random_tensor(sa, &[1, 3, 12, 12], 0.0, 1.0));
        let b = g.constant(random_tensor(sb + 1000, &[1, 3, 12, 12], 0.0, 1.0));
        let s = ssim_loss(a, b).unwrap().item();
        prop_assert!((0.0..=2.0).contains(&s));
        let p = pixel_loss(a, b, PixelReduction::Mean).unwrap().item();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(cr_loss(a, b, g.constant(Tensor::full(&[1, 3, 12, 12], 0.9)), &Extractor::default()).unwrap().item() >= 0.0);
    }
}
