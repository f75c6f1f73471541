//! Compares average and distance-aware aggregation when one of eight
//! preliminary parameters is an outlier.

use hazemeta::aggregate::{aggregate, pairwise_mean_distance, Aggregator, NormReduction};
use hazemeta_grad::{Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> hazemeta::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape = [1, 8, 4, 4];
    let mu = Tensor::from_fn(&shape, |i| (i as f64 * 0.37).sin());
    let noise = Normal::new(0.0, 0.01).expect("valid sigma");
    let g = Graph::no_grad();
    let mut prelims: Vec<_> = (0..7)
        .map(|_| g.constant(Tensor::from_fn(&shape, |i| mu.data()[i] + noise.sample(&mut rng))))
        .collect();
    prelims.push(g.constant(Tensor::from_fn(&shape, |i| mu.data()[i] + 10.0)));

    let d = pairwise_mean_distance(&prelims, NormReduction::Mean)?;
    println!("mean distance per sample: {:.3?}", d.values());
    let l1 = |t: &Tensor| t.data().iter().zip(mu.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / mu.len() as f64;
    for kind in [Aggregator::Average, Aggregator::DistanceAware] {
        let tp = aggregate(kind, &prelims, NormReduction::Mean)?;
        println!(
            "{kind:?}: weights {:.4?}, mean |phi - mu| = {:.4}",
            tp.source_weights,
            l1(&tp.features.value())
        );
    }
    Ok(())
}
