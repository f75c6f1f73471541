mod common;

use common::{max_abs_diff, random_tensor};
use hazemeta::aggregate::{
    aggregate, average_aggregate, distance_aware_aggregate, pairwise_mean_distance, Aggregator, NormReduction,
};
use hazemeta_grad::{Graph, Tensor};
use proptest::prelude::*;

/// Mean L1 distance of every item to the others, by brute force.
fn oracle_distances(items: &[Vec<f64>]) -> Vec<f64> {
    let k = items.len();
    (0..k)
        .map(|i| {
            (0..k)
                .filter(|&j| j != i)
                .map(|j| {
                    items[i].iter().zip(&items[j]).map(|(a, b)| (a - b).abs()).sum::<f64>() / items[i].len() as f64
                })
                .sum::<f64>()
                / (k - 1) as f64
        })
        .collect()
}

fn oracle_softmax_neg(d: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = d.iter().map(|x| (-x).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

#[test]
fn hand_computed_triple() {
    let g = Graph::no_grad();
    let items = [vec![0.0, 0.0], vec![2.0, 2.0], vec![4.0, 4.0]];
    let prelims: Vec<_> = items.iter().map(|v| g.constant(Tensor::new(&[2], v.clone()))).collect();

    let d = pairwise_mean_distance(&prelims, NormReduction::Mean).unwrap().values();
    assert_eq!(d, oracle_distances(&items));
    assert_eq!(d, vec![3.0, 2.0, 3.0]);

    let tp = distance_aware_aggregate(&prelims, NormReduction::Mean).unwrap();
    let expect = oracle_softmax_neg(&d);
    assert!(max_abs_diff(&tp.source_weights, &expect) < 1e-12);
    assert!(max_abs_diff(&tp.source_weights, &[0.2119, 0.5761, 0.2119]) < 1e-3);
    assert_eq!(tp.features.value().data(), &[2.0, 2.0]);
}

#[test]
fn sum_reduction_matches_unnormalized_oracle() {
    let g = Graph::no_grad();
    let items: Vec<Vec<f64>> = (0..4).map(|s| random_tensor(s, &[6], -1.0, 1.0).data().to_vec()).collect();
    let prelims: Vec<_> = items.iter().map(|v| g.constant(Tensor::new(&[6], v.clone()))).collect();
    let d = pairwise_mean_distance(&prelims, NormReduction::Sum).unwrap().values();
    let expect: Vec<f64> = oracle_distances(&items).iter().map(|x| x * 6.0).collect();
    assert!(max_abs_diff(&d, &expect) < 1e-12);
}

#[test]
fn outlier_is_downweighted() {
    let g = Graph::no_grad();
    let shape = [1, 4, 2, 2];
    let mut prelims: Vec<_> = (0..7).map(|s| g.constant(random_tensor(s, &shape, 0.0, 0.05))).collect();
    prelims.push(g.constant(random_tensor(99, &shape, 10.0, 10.05)));
    let tp = distance_aware_aggregate(&prelims, NormReduction::Mean).unwrap();
    assert!(tp.source_weights[7] < 1e-3, "{:?}", tp.source_weights);
    let avg = average_aggregate(&prelims).unwrap();
    let mean_abs = |t: &Tensor| t.data().iter().map(|x| x.abs()).sum::<f64>() / t.len() as f64;
    assert!(mean_abs(&tp.features.value()) < mean_abs(&avg.features.value()));
}

fn items_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6, 1usize..8).prop_flat_map(|(k, n)| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, n), k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_form_a_distribution(items in items_strategy()) {
        let g = Graph::no_grad();
        let prelims: Vec<_> = items.iter().map(|v| g.constant(Tensor::new(&[v.len()], v.clone()))).collect();
        for kind in [Aggregator::Average, Aggregator::DistanceAware] {
            let tp = aggregate(kind, &prelims, NormReduction::Mean).unwrap();
            prop_assert!(tp.source_weights.iter().all(|&w| w >= 0.0));
            prop_assert!((tp.source_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // A convex combination stays inside the per-coordinate hull.
            for (c, &x) in tp.features.value().data().iter().enumerate() {
                let lo = items.iter().map(|v| v[c]).fold(f64::INFINITY, f64::min);
                let hi = items.iter().map(|v| v[c]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(x >= lo - 1e-9 && x <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn permutation_invariant(items in items_strategy(), rot in 0usize..6) {
        let g = Graph::no_grad();
        let mut shuffled = items.clone();
        let len = shuffled.len();
        shuffled.rotate_left(rot % len);
        shuffled.reverse();
        let run = |set: &[Vec<f64>]| {
            let prelims: Vec<_> = set.iter().map(|v| g.constant(Tensor::new(&[v.len()], v.clone()))).collect();
            distance_aware_aggregate(&prelims, NormReduction::Mean).unwrap().features.value().data().to_vec()
        };
        prop_assert!(max_abs_diff(&run(&items), &run(&shuffled)) < 1e-9);
    }

    #[test]
    fn two_items_reduce_to_the_average(a in prop::collection::vec(-5.0f64..5.0, 6), b in prop::collection::vec(-5.0f64..5.0, 6)) {
        let g = Graph::no_grad();
        let prelims = [g.constant(Tensor::new(&[6], a)), g.constant(Tensor::new(&[6], b))];
        let daa = distance_aware_aggregate(&prelims, NormReduction::Mean).unwrap();
        let avg = average_aggregate(&prelims).unwrap();
        prop_assert!(max_abs_diff(daa.features.value().data(), avg.features.value().data()) < 1e-12);
    }

    #[test]
    fn identical_items_aggregate_to_themselves(v in prop::collection::vec(-5.0f64..5.0, 1..10), k in 1usize..6) {
        let g = Graph::no_grad();
        let prelims: Vec<_> = (0..k).map(|_| g.constant(Tensor::new(&[v.len()], v.clone()))).collect();
        let tp = distance_aware_aggregate(&prelims, NormReduction::Mean).unwrap();
        prop_assert!(max_abs_diff(tp.features.value().data(), &v) < 1e-12);
    }
}
