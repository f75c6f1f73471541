use hazemeta_grad::check::{check_gradients, GradCheckConfig};
use hazemeta_grad::ops::{concat0, stack, weighted_sum, ConvGeometry};
use hazemeta_grad::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn positive(shape: &[usize], seed: u64) -> Tensor {
    random(shape, seed).map(|v| v.abs() + 0.5)
}

fn assert_passes<F>(f: F, inputs: &[Tensor])
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>,
{
    let report = check_gradients(f, inputs, GradCheckConfig::default());
    assert!(report.passed(), "{report:?}");
    assert!(report.kink_fraction() < 0.05, "{report:?}");
}

/// Weighted sum so that every output coordinate gets a distinct cotangent.
fn probe<'g>(y: Var<'g>, seed: u64) -> Var<'g> {
    let w = random(&y.shape(), seed);
    y.mul(y.graph().constant(w)).sum()
}

#[test]
fn elementwise_ops() {
    let a = random(&[3, 4], 1);
    let b = positive(&[3, 4], 2);
    assert_passes(|_, v| probe(v[0].add(v[1]).mul(v[0]).div(v[1]), 3), &[a.clone(), b.clone()]);
    assert_passes(|_, v| probe(v[0].sigmoid().exp().sub(v[1].sqrt()), 4), &[a.clone(), b.clone()]);
    assert_passes(|_, v| probe(v[1].ln().add(v[0].abs()).square(), 5), &[a.clone(), b.clone()]);
    assert_passes(|_, v| probe(v[0].relu().mul_scalar(3.0).add_scalar(1.0), 6), &[a]);
}

#[test]
fn scalar_broadcast_and_stack() {
    let x = random(&[5], 7);
    let s = random(&[1], 8);
    assert_passes(
        |_, v| {
            let parts: Vec<_> = (0..5).map(|i| v[0].index(i).scale_by(v[1])).collect();
            probe(stack(&parts).softmax_rows(), 9)
        },
        &[x, s],
    );
}

#[test]
fn row_reductions() {
    let m = random(&[4, 6], 10);
    let v = positive(&[4], 11);
    let c = random(&[6], 12);
    assert_passes(|_, x| probe(x[0].row_max().add(x[0].row_min()), 13), &[m.clone()]);
    assert_passes(|_, x| probe(x[0].div_col(x[1]).row_sum(), 14), &[m.clone(), v]);
    assert_passes(|_, x| probe(x[0].sub_row(x[1]).col_mean(), 15), &[m.clone(), c]);
    assert_passes(|_, x| probe(x[0].softmax_rows().pick_rows(&[0, 5, 2, 3]), 16), &[m.clone()]);
    assert_passes(|_, x| probe(x[0].mean_per_sample(), 17), &[m]);
}

#[test]
fn matrix_products() {
    let a = random(&[3, 4], 20);
    let b = random(&[4, 5], 21);
    let bt = random(&[5, 4], 22);
    assert_passes(|_, v| probe(v[0].matmul(v[1]), 23), &[a.clone(), b]);
    assert_passes(|_, v| probe(v[0].matmul_nt(v[1]), 24), &[a.clone(), bt]);
    assert_passes(|_, v| probe(v[0].transpose2d(), 25), &[a]);
}

#[test]
fn aggregation_primitives() {
    let items: Vec<Tensor> = (0..3).map(|i| random(&[2, 3], 30 + i)).collect();
    let w = positive(&[3], 33);
    let mut inputs = items.clone();
    inputs.push(w);
    assert_passes(|_, v| probe(weighted_sum(&v[..3], v[3]), 34), &inputs);
    assert_passes(|_, v| v[0].l1_mean_distance(v[1]).mul_scalar(2.0), &items[..2]);
    assert_passes(
        |_, v| probe(concat0(&[v[0], v[1], v[0]]).slice0(1, 2), 35),
        &items[..2],
    );
}

#[test]
fn convolution() {
    let x = random(&[2, 3, 7, 6], 40);
    let w = random(&[4, 3, 3, 3], 41);
    let b = random(&[4], 42);
    for geo in [
        ConvGeometry::new(3, 1, 1),
        ConvGeometry::new(3, 2, 1),
        ConvGeometry::new(3, 1, 0),
    ] {
        assert_passes(
            move |_, v| probe(v[0].conv2d(v[1], Some(v[2]), geo), 43),
            &[x.clone(), w.clone(), b.clone()],
        );
    }
    let w1 = random(&[2, 3, 1, 1], 44);
    assert_passes(
        |_, v| probe(v[0].conv2d(v[1], None, ConvGeometry::new(1, 1, 0)), 45),
        &[x, w1],
    );
}

#[test]
fn spatial_ops() {
    let x = random(&[2, 3, 4, 5], 50);
    let s = random(&[2, 3], 51);
    let y = random(&[2, 2, 4, 5], 52);
    assert_passes(|_, v| probe(v[0].global_avg_pool(), 53), &[x.clone()]);
    assert_passes(|_, v| probe(v[0].channel_scale(v[1]), 54), &[x.clone(), s]);
    assert_passes(|_, v| probe(v[0].upsample_nearest2x(), 55), &[x.clone()]);
    assert_passes(|_, v| probe(v[0].resize_bilinear(7, 3), 56), &[x.clone()]);
    assert_passes(|_, v| probe(v[0].concat_channels(v[1]), 57), &[x.clone(), y]);
    let big = random(&[1, 2, 8, 9], 58);
    assert_passes(
        |_, v| probe(v[0].separable_filter_valid(&[0.2, 0.5, 0.3, 0.1]), 59),
        &[big],
    );
}

#[test]
fn batch_norm_both_modes() {
    let x = random(&[3, 2, 3, 3], 60);
    let gamma = positive(&[2], 61);
    let beta = random(&[2], 62);
    assert_passes(
        |_, v| probe(v[0].batch_norm_train(v[1], v[2], 1e-5).0, 63),
        &[x.clone(), gamma.clone(), beta.clone()],
    );
    assert_passes(
        |_, v| probe(v[0].batch_norm_eval(v[1], v[2], &[0.1, -0.2], &[0.5, 2.0], 1e-5), 64),
        &[x, gamma, beta],
    );
}

#[test]
fn batch_norm_train_normalizes_channels() {
    let g = Graph::no_grad();
    let x = g.constant(random(&[4, 2, 3, 3], 70).map(|v| 3.0 * v + 1.0));
    let (y, stats) = x.batch_norm_train(
        g.constant(Tensor::ones(&[2])),
        g.constant(Tensor::zeros(&[2])),
        0.0,
    );
    let y = y.value();
    for c in 0..2 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|n| y.data()[(n * 2 + c) * 9..(n * 2 + c + 1) * 9].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }
    assert_eq!(stats.mean.len(), 2);
}
