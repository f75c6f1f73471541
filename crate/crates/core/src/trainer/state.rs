//! Serializable training state.

use std::path::Path;

use hazemeta_grad::optim::Adam;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapt::init_adapt;
use crate::backbone::init_backbone;
use crate::checkpoint::{read_container, write_container, Container};
use crate::config::{parse_snapshot, RunConfig};
use crate::dcr::init_classifier;
use crate::error::{Error, Result};
use crate::nn::ParamSet;

/// Freshly initialized weights. Each network draws from its own stream of
/// the training seed, so variants share every layer they have in common.
pub fn init_params(cfg: &RunConfig) -> ParamSet {
    let stream = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        rng.set_stream(s);
        rng
    };
    let mut ps = ParamSet::new();
    let phi = cfg.conditioned().then_some(cfg.model.adapt.out_channels);
    init_backbone(&mut ps, &cfg.model.backbone, phi, &mut stream(2));
    if cfg.conditioned() {
        init_adapt(&mut ps, &cfg.model.adapt, &mut stream(3));
        init_classifier(
            &mut ps,
            &cfg.model.classifier,
            cfg.model.adapt.out_channels,
            cfg.data.train_domains.len(),
            &mut stream(4),
        );
    }
    ps
}

/// Weights, optimizer moments, step counter and the data-sampling rng.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ParamSet,
    pub adam: Adam,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

impl TrainState {
    pub fn init(cfg: &RunConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        rng.set_stream(1);
        Self {
            params: init_params(cfg),
            adam: Adam::new(cfg.train.lr, cfg.train.adam_beta1, cfg.train.adam_beta2),
            step: 0,
            rng,
        }
    }

    pub fn save(&self, path: &Path, cfg: &RunConfig) -> Result<()> {
        let mut c = Container {
            params: self.params.clone(),
            moments: self
                .adam
                .moments()
                .map(|(k, m, v)| (k.to_string(), m.clone(), v.clone()))
                .collect(),
            ..Container::default()
        };
        let meta = &mut c.metadata;
        meta.insert("config".into(), cfg.to_toml());
        meta.insert("config_hash".into(), cfg.hash());
        meta.insert("step".into(), self.step.to_string());
        meta.insert("adam_step".into(), self.adam.steps_taken().to_string());
        meta.insert("rng_seed".into(), hex(&self.rng.get_seed()));
        meta.insert("rng_stream".into(), self.rng.get_stream().to_string());
        meta.insert("rng_word_pos".into(), self.rng.get_word_pos().to_string());
        write_container(path, &c)
    }

    /// Restores the state and the config it was trained with.
    pub fn load(path: &Path) -> Result<(Self, RunConfig)> {
        let c = read_container(path)?;
        let err = |m: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message: m,
        };
        let get = |k: &str| {
            c.metadata
                .get(k)
                .ok_or_else(|| err(format!("metadata field {k} is missing")))
        };
        let cfg = parse_snapshot(get("config")?)
            .map_err(|e| err(format!("embedded config: {e}")))?;
        let num = |k: &str| -> Result<u128> {
            get(k)?
                .parse()
                .map_err(|_| err(format!("metadata field {k} is not a number")))
        };
        let seed = unhex(get("rng_seed")?).ok_or_else(|| err("bad rng_seed".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(num("rng_stream")? as u64);
        rng.set_word_pos(num("rng_word_pos")?);

        init_params(&cfg)
            .check_compatible(&c.params)
            .map_err(|e| err(format!("weights do not match the embedded config: {e}")))?;
        let adam = Adam::restore(
            cfg.train.lr,
            cfg.train.adam_beta1,
            cfg.train.adam_beta2,
            num("adam_step")? as u64,
            c.moments,
        );
        let state = Self {
            params: c.params,
            adam,
            step: num("step")? as u64,
            rng,
        };
        Ok((state, cfg))
    }
}
