//! Frozen multi-level feature extractor for the contrastive perceptual loss.
//!
//! The default is a five-stage random convolutional pyramid drawn from a
//! fixed seed. Pretrained weights with the same parameter names and shapes
//! can be loaded from a checkpoint container instead.

use std::path::Path;

use hazemeta_grad::Var;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::error::Result;
use crate::nn::{Ctx, Mode, ParamSet};

/// `(input channels, output channels, stride)` per stage.
const STAGES: [(usize, usize, usize); 5] = [(3, 8, 1), (8, 16, 2), (16, 16, 1), (16, 32, 2), (32, 32, 2)];

pub const DEFAULT_SEED: u64 = 0x5eed_f00d;

/// Per-level weights of the contrastive loss, shallow to deep.
pub const LEVEL_WEIGHTS: [f64; 5] = [1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0];

#[derive(Clone, Debug, PartialEq)]
pub struct Extractor {
    params: ParamSet,
}

impl Extractor {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (i, (cin, cout, _)) in STAGES.iter().enumerate() {
            params.add_conv(&format!("extractor.stage{}", i + 1), *cin, *cout, 3, true, &mut rng);
        }
        Self { params }
    }

    /// Loads `extractor.*` tensors from a container file, checking that they
    /// match the expected layout.
    pub fn load(path: &Path) -> Result<Self> {
        let loaded = checkpoint::read_container(path)?;
        let mut params = ParamSet::new();
        for (name, t) in loaded.params.params() {
            if name.starts_with("extractor.") {
                params.insert_param(name, t.clone());
            }
        }
        Self::random(DEFAULT_SEED).params.check_compatible(&params).map_err(|e| {
            crate::Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!("extractor weights: {e}"),
            }
        })?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Feature maps after every stage, shallow to deep.
    pub fn features<'g>(&self, x: Var<'g>) -> Vec<Var<'g>> {
        let ctx = Ctx::frozen(x.graph(), &self.params, Mode::Eval);
        let mut h = x;
        STAGES
            .iter()
            .enumerate()
            .map(|(i, &(_, _, stride))| {
                h = ctx.conv(h, &format!("extractor.stage{}", i + 1), stride).relu();
                h
            })
            .collect()
    }
}

impl Default for Extractor {
    fn default() -> Self {
        Self::random(DEFAULT_SEED)
    }
}
