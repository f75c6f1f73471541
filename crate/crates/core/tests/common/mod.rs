#![allow(dead_code)]

use hazemeta::datagen::SceneConfig;
use hazemeta::RunConfig;
use hazemeta_grad::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A config small enough for a training step in well under a second.
pub fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.train.crop_size = 16;
    cfg.train.samples_per_task = 2;
    cfg.train.scene_count = 6;
    cfg.train.max_steps = 3;
    cfg.train.checkpoint_every = 0;
    cfg.data.scene = SceneConfig::small();
    cfg.model.backbone.base_width = 8;
    cfg.model.backbone.res_blocks = 1;
    cfg.model.adapt.block_channels = [8, 16];
    cfg.model.adapt.out_channels = 16;
    cfg.model.classifier.hidden = 8;
    cfg.eval.n_images = 2;
    cfg.eval.context_size = 2;
    cfg.eval.dark_channel_patch = 5;
    cfg.validate().expect("tiny config is valid");
    cfg
}

pub fn random_tensor(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
