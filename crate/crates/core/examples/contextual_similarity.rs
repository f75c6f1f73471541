//! Contextual loss and the contrastive regularizer on small task parameters.

use hazemeta::dcr::{contextual_loss, dcr_loss, select_positive, CxConfig};
use hazemeta_grad::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hazemeta::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = Graph::no_grad();
    let cfg = CxConfig::default();
    let mut random = |offset: f64| g.constant(Tensor::from_fn(&[1, 4, 3, 3], |_| offset + rng.gen_range(0.0..1.0)));

    let a = random(0.0);
    println!("L_cx(a, a) = {:.6}", contextual_loss(a, a, &cfg)?.item());
    let b = random(0.0);
    println!("L_cx(a, b) = {:.6}", contextual_loss(a, b, &cfg)?.item());

    // Two tasks of domain 0 and one of domain 1.
    let params = [a, random(0.05), random(3.0)];
    let sel = select_positive(&[0, 0, 1], &[0.7, 0.9, 0.8])?;
    println!("anchor {}, positive {}, negatives {:?}", sel.anchor, sel.positive, sel.negatives);
    let loss = dcr_loss(&sel, &params, &cfg, 1e-7)?;
    println!("L_DCR = {:.6}", loss.item());
    Ok(())
}
