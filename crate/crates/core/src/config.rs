//! Run configuration: TOML file, dotted overrides, validation.
//!
//! Every section has defaults, so an empty file is a complete config. Keys
//! are checked against the default tree before deserialization so that a
//! typo is reported together with the closest valid key.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Value;

use crate::adapt::{AdaptConfig, AdaptNet};
use crate::aggregate::{Aggregator, NormReduction};
use crate::backbone::BackboneConfig;
use crate::datagen::{DomainSpec, SceneConfig};
use crate::dcr::{ClassifierConfig, CxConfig};
use crate::error::{Error, Result};
use crate::evaluate::ablation::Variant;
use crate::losses::{LossWeights, PixelReduction};

/// Environment variable that replaces `train.seed`.
pub const SEED_ENV: &str = "HAZEMETA_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Tasks per batch.
    pub num_tasks: usize,
    /// Pairs per task.
    pub samples_per_task: usize,
    pub crop_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Per-module gradient-norm ceiling applied before the optimizer; 0 disables.
    pub grad_clip: f64,
    pub max_steps: u64,
    /// Periodic checkpoint interval in steps; 0 keeps only the final one.
    pub checkpoint_every: u64,
    pub aggregator: Aggregator,
    pub norm_reduction: NormReduction,
    pub dcr_enabled: bool,
    /// The engine is single-threaded and always deterministic; the flag is
    /// recorded so saved configs state the intent.
    pub deterministic: bool,
    /// Clear scenes generated for training.
    pub scene_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_tasks: 3,
            samples_per_task: 4,
            crop_size: 64,
            lr: 2e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            grad_clip: 1.0,
            max_steps: 2000,
            checkpoint_every: 500,
            aggregator: Aggregator::DistanceAware,
            norm_reduction: NormReduction::Mean,
            dcr_enabled: true,
            deterministic: true,
            scene_count: 64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub adapt: AdaptConfig,
    pub backbone: BackboneConfig,
    pub classifier: ClassifierConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    /// Stabilizer in the contrastive ratio denominator.
    pub sigma: f64,
    pub pixel_reduction: PixelReduction,
    pub cx: CxConfig,
    /// Container file with extractor weights; empty selects the built-in
    /// random pyramid.
    pub extractor_weights: String,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            lambda3: w.lambda3,
            lambda4: w.lambda4,
            sigma: 1e-7,
            pixel_reduction: PixelReduction::Mean,
            cx: CxConfig::default(),
            extractor_weights: String::new(),
        }
    }
}

impl LossConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            lambda4: self.lambda4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_domains: Vec<DomainSpec>,
    pub held_out_domains: Vec<DomainSpec>,
    pub scene: SceneConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        let [d0, d1, d2] = DomainSpec::desk_domains();
        Self {
            train_domains: vec![d0, d1],
            held_out_domains: vec![d2],
            scene: SceneConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_images: usize,
    /// Seed of the test scenes and haze draws; kept apart from training.
    pub seed: u64,
    /// Extra same-domain hazy images used as inference context.
    pub context_size: usize,
    pub dark_channel_patch: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_images: 16,
            seed: 90_001,
            context_size: 3,
            dark_channel_patch: 15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    /// Training steps per variant and seed.
    pub steps: u64,
    pub variants: Vec<Variant>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            steps: 400,
            variants: Variant::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
}

fn bad(key: &str, message: impl Into<String>) -> Error {
    Error::config(key, message)
}

impl RunConfig {
    /// Checks every constraint and applies the two-task fallback: with fewer
    /// than three tasks per batch the contrastive term is switched off.
    pub fn validate(&mut self) -> Result<()> {
        let t = &mut self.train;
        if t.num_tasks < 2 {
            return Err(bad("train.num_tasks", "need at least 2 tasks per batch"));
        }
        if t.dcr_enabled && t.num_tasks < 3 {
            log::warn!(
                "train.num_tasks = {} leaves no cross-domain negative; disabling the contrastive term",
                t.num_tasks
            );
            t.dcr_enabled = false;
        }
        if t.samples_per_task == 0 {
            return Err(bad("train.samples_per_task", "must be >= 1"));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(bad("train.lr", "must be > 0"));
        }
        for (k, b) in [("train.adam_beta1", t.adam_beta1), ("train.adam_beta2", t.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(bad(k, "must lie in [0, 1)"));
            }
        }
        if !(t.grad_clip >= 0.0 && t.grad_clip.is_finite()) {
            return Err(bad("train.grad_clip", "must be >= 0 (0 disables clipping)"));
        }
        if t.crop_size < 16 || t.crop_size % 8 != 0 {
            return Err(bad("train.crop_size", "must be a multiple of 8 and >= 16"));
        }
        let scene = &self.data.scene;
        if t.crop_size > scene.height.min(scene.width) {
            return Err(bad(
                "train.crop_size",
                format!("{} exceeds the {}x{} scenes", t.crop_size, scene.height, scene.width),
            ));
        }
        if scene.height < 16 || scene.width < 16 {
            return Err(bad("data.scene", "scenes must be at least 16x16"));
        }
        if t.scene_count == 0 {
            return Err(bad("train.scene_count", "must be >= 1"));
        }
        if self.data.train_domains.is_empty() {
            return Err(bad("data.train_domains", "need at least one training domain"));
        }
        if t.dcr_enabled && self.data.train_domains.len() < 2 {
            return Err(bad(
                "data.train_domains",
                "the contrastive term needs at least 2 training domains",
            ));
        }
        let mut ids = Vec::new();
        for (key, doms) in [
            ("data.train_domains", &self.data.train_domains),
            ("data.held_out_domains", &self.data.held_out_domains),
        ] {
            for d in doms {
                d.validate().map_err(|e| bad(key, e.to_string()))?;
                if ids.contains(&d.id) {
                    return Err(bad(key, format!("domain id {} used twice", d.id)));
                }
                ids.push(d.id);
            }
        }
        self.loss.weights().validate()?;
        if !(self.loss.sigma > 0.0) {
            return Err(bad("loss.sigma", "must be > 0"));
        }
        if !(self.loss.cx.h > 0.0) {
            return Err(bad("loss.cx.h", "must be > 0"));
        }
        if !(self.loss.cx.eps > 0.0) {
            return Err(bad("loss.cx.eps", "must be > 0"));
        }
        let m = &self.model;
        if m.adapt.out_channels == 0 || m.adapt.block_channels.contains(&0) || m.adapt.gate_hidden == 0 {
            return Err(bad("model.adapt", "channel counts must be >= 1"));
        }
        if m.backbone.base_width == 0 {
            return Err(bad("model.backbone.base_width", "must be >= 1"));
        }
        if m.classifier.hidden == 0 {
            return Err(bad("model.classifier.hidden", "must be >= 1"));
        }
        if self.eval.n_images == 0 {
            return Err(bad("eval.n_images", "must be >= 1"));
        }
        if self.eval.dark_channel_patch % 2 == 0 {
            return Err(bad("eval.dark_channel_patch", "must be odd"));
        }
        if self.ablation.seeds.is_empty() {
            return Err(bad("ablation.seeds", "need at least one seed"));
        }
        Ok(())
    }

    /// Whether the model has an adaptation network, classifier and fusion.
    pub fn conditioned(&self) -> bool {
        self.model.adapt.net != AdaptNet::None
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Short stable digest of the resolved config.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

fn all_keys(prefix: &str, v: &Value, out: &mut Vec<String>) {
    if let Value::Table(t) = v {
        for (k, child) in t {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            out.push(key.clone());
            all_keys(&key, child, out);
        }
    }
}

fn nearest(key: &str, defaults: &Value) -> Option<String> {
    let mut keys = Vec::new();
    all_keys("", defaults, &mut keys);
    keys.into_iter()
        .map(|k| (strsim::damerau_levenshtein(key, &k), k))
        .min()
        .map(|(_, k)| k)
}

/// Full dotted path of the first leaf under `v`, so typos in a section name
/// are reported against complete keys.
fn first_leaf(prefix: &str, v: &Value) -> String {
    match v {
        Value::Table(t) => match t.iter().next() {
            Some((k, v)) => first_leaf(&format!("{prefix}.{k}"), v),
            None => prefix.to_string(),
        },
        _ => prefix.to_string(),
    }
}

/// Rejects keys of `given` that do not exist in `template`.
fn check_keys(prefix: &str, given: &Value, template: &Value, root: &Value) -> Result<()> {
    match (given, template) {
        (Value::Table(g), Value::Table(t)) => {
            for (k, v) in g {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match t.get(k) {
                    Some(tv) => check_keys(&key, v, tv, root)?,
                    None => {
                        let key = first_leaf(&key, v);
                        let hint = nearest(&key, root)
                            .map(|n| format!("; did you mean `{n}`?"))
                            .unwrap_or_default();
                        return Err(bad(&key, format!("unknown key{hint}")));
                    }
                }
            }
            Ok(())
        }
        (Value::Array(g), Value::Array(t)) => match t.first() {
            Some(item) => g.iter().try_for_each(|v| check_keys(prefix, v, item, root)),
            None => Ok(()),
        },
        _ => Ok(()),
    }
}

fn parse_override(raw: &str) -> Result<(String, Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| bad(raw, "override must look like section.key=value"))?;
    let key = key.trim().trim_start_matches("--").to_string();
    if key.is_empty() {
        return Err(bad(raw, "override has an empty key"));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()));
    Ok((key, parsed))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| bad(key, format!("`{}` is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(toml::Table::new()));
    }
    unreachable!("split yields at least one part")
}

/// Parses TOML text, applies `section.key=value` overrides and the seed
/// environment variable, and validates the result.
pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<RunConfig> {
    resolve(text, overrides, std::env::var(SEED_ENV).ok())
}

/// Parses a config snapshot stored with a checkpoint, ignoring the seed
/// environment variable.
pub(crate) fn parse_snapshot(text: &str) -> Result<RunConfig> {
    resolve(text, &[], None)
}

fn resolve(text: &str, overrides: &[String], env_seed: Option<String>) -> Result<RunConfig> {
    let mut tree: Value = Value::Table(
        toml::from_str::<toml::Table>(text).map_err(|e| bad("<file>", e.message().to_string()))?,
    );
    for raw in overrides {
        let (key, value) = parse_override(raw)?;
        set_path(&mut tree, &key, value)?;
    }
    if let Some(seed) = env_seed {
        let seed: i64 = seed
            .trim()
            .parse()
            .map_err(|_| bad("train.seed", format!("{SEED_ENV}={seed} is not an integer")))?;
        set_path(&mut tree, "train.seed", Value::Integer(seed))?;
    }
    let defaults = Value::try_from(RunConfig::default()).expect("defaults serialize");
    check_keys("", &tree, &defaults, &defaults)?;
    let mut cfg: RunConfig = tree
        .try_into()
        .map_err(|e: toml::de::Error| bad("<config>", e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads `path` (a missing path means an empty file) and resolves it.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => String::new(),
    };
    parse_config_str(&text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse_config_str("", &[]).unwrap();
        let w = cfg.loss.weights();
        assert_eq!((w.lambda1, w.lambda2, w.lambda3, w.lambda4), (0.5, 0.1, 1.0, 0.5));
        assert_eq!(cfg.train.lr, 2e-4);
        assert_eq!(cfg.train.num_tasks, 3);
    }

    #[test]
    fn override_wins() {
        let cfg = parse_config_str("[train]\nlr = 0.5\n", &["train.lr=1e-3".into()]).unwrap();
        assert_eq!(cfg.train.lr, 1e-3);
        let cfg = parse_config_str("", &["--model.adapt.net=plain_conv".into()]).unwrap();
        assert_eq!(cfg.model.adapt.net, AdaptNet::PlainConv);
    }

    #[test]
    fn typo_suggests_nearest_key() {
        let err = parse_config_str("", &["trian.lr=1e-3".into()]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("trian.lr") && msg.contains("train.lr"), "{msg}");
        assert_eq!(err.exit_code(), 2);
        let err = parse_config_str("[train]\nlearning_rate = 1\n", &[]).unwrap_err();
        assert!(err.to_string().contains("train.learning_rate"));
    }

    #[test]
    fn nested_domain_keys_are_checked() {
        let text = "[[data.train_domains]]\nid = 0\nbeta_range = [0.5, 0.6]\na_range = [0.8, 0.9]\ndepth_bias = 1.0\nrng_seed = 1\nbogus = 2\n";
        let err = parse_config_str(text, &[]).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn two_tasks_disable_the_contrastive_term() {
        let cfg = parse_config_str("", &["train.num_tasks=2".into()]).unwrap();
        assert!(!cfg.train.dcr_enabled);
    }

    #[test]
    fn constraint_violations_name_the_key() {
        for (o, key) in [
            ("train.lr=0", "train.lr"),
            ("train.crop_size=60", "train.crop_size"),
            ("loss.lambda2=-1", "loss.lambda2"),
            ("eval.dark_channel_patch=4", "eval.dark_channel_patch"),
        ] {
            let err = parse_config_str("", &[o.into()]).unwrap_err();
            assert!(err.to_string().contains(key), "{o}: {err}");
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = parse_config_str("", &["train.seed=7".into()]).unwrap();
        let again = parse_config_str(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
    }
}
