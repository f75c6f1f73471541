//! Episodic training, checkpoints and inference.
//!
//! One step: encode every hazy image of every task into a preliminary
//! parameter, aggregate each task's parameters, dehaze the task's images
//! with its task parameter, classify the task parameters by domain, and
//! combine pixel, SSIM, contrastive perceptual, cross-entropy and
//! domain-relevant contrastive losses for a single Adam update.

mod sampling;
mod state;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hazemeta_grad::ops::concat0;
use hazemeta_grad::{Graph, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use sampling::{augment_pair, plan_domains, sample_batch, satisfies_pairing};
pub use state::{init_params, TrainState};

use crate::adapt::{encode_preliminary, ADAPT_STRIDE};
use crate::aggregate::{aggregate, TaskParam};
use crate::backbone::dehaze;
use crate::config::RunConfig;
use crate::datagen::{SceneBank, Task};
use crate::dcr::{classify_domains, dcr_loss, select_positive, DomainPrediction};
use crate::error::{Error, Result};
use crate::extractor::Extractor;
use crate::image::Image;
use crate::losses::{ce_loss, cr_loss, pixel_loss, ssim_loss, total_loss, LossBreakdown, LossTerms};
use crate::nn::{Ctx, Mode, ParamSet};

/// Aggregated task parameters for consecutive groups of `sizes[i]` images.
fn task_params<'g>(ctx: &Ctx<'g, '_>, cfg: &RunConfig, hazy: Var<'g>, sizes: &[usize]) -> Result<Vec<TaskParam<'g>>> {
    let prelims = encode_preliminary(ctx, hazy)?;
    let mut start = 0;
    sizes
        .iter()
        .map(|&k| {
            let items: Vec<Var<'g>> = (start..start + k).map(|i| prelims.slice0(i, 1)).collect();
            start += k;
            aggregate(cfg.train.aggregator, &items, cfg.train.norm_reduction)
        })
        .collect()
}

/// Position of each task's domain in the training-domain list.
fn domain_labels(cfg: &RunConfig, tasks: &[Task]) -> Result<Vec<usize>> {
    tasks
        .iter()
        .map(|t| {
            cfg.data
                .train_domains
                .iter()
                .position(|d| d.id == t.domain_id)
                .ok_or_else(|| Error::InvalidInput(format!("domain {} is not a training domain", t.domain_id)))
        })
        .collect()
}

fn batch_images<'a>(tasks: &'a [Task], pick: impl Fn(&'a crate::datagen::SamplePair) -> &'a Image) -> Result<hazemeta_grad::Tensor> {
    let images: Vec<&Image> = tasks.iter().flat_map(|t| t.pairs.iter().map(&pick)).collect();
    Image::batch_tensor(&images)
}

/// Per-step diagnostics.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub losses: LossBreakdown,
    /// Task domains of the batch, in order.
    pub domains: Vec<usize>,
    /// Empty for the unconditioned variant.
    pub predictions: Vec<DomainPrediction>,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Value of the scalar that was backpropagated.
    pub objective: f64,
}

/// Rescales each module's gradients (keyed by the name before the first
/// `.`) so that module's norm is at most `clip`. Zero disables clipping.
fn clip_per_module(grads: &mut BTreeMap<String, hazemeta_grad::Tensor>, clip: f64) {
    if clip <= 0.0 {
        return;
    }
    let module = |k: &str| k.split('.').next().unwrap_or(k).to_string();
    let mut norms: BTreeMap<String, f64> = BTreeMap::new();
    for (k, t) in grads.iter() {
        *norms.entry(module(k)).or_default() += t.data().iter().map(|x| x * x).sum::<f64>();
    }
    for (k, t) in grads.iter_mut() {
        let norm = norms[&module(k)].sqrt();
        if norm > clip {
            *t = t.scale(clip / norm);
        }
    }
}

/// One optimizer step over all trainable parameters.
pub fn train_step(state: &mut TrainState, batch: &[Task], cfg: &RunConfig, extractor: &Extractor) -> Result<StepOutput> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let domains: Vec<usize> = batch.iter().map(|t| t.domain_id).collect();
    let hazy_t = batch_images(batch, |p| &p.hazy)?;
    let clear_t = batch_images(batch, |p| &p.clear)?;

    let g = Graph::new();
    let ctx = Ctx::new(&g, &state.params, Mode::Train);
    let hazy = g.constant(hazy_t);
    let clear = g.constant(clear_t);

    let mut ce = None;
    let mut dcr = None;
    let mut predictions = Vec::new();
    let restored = if cfg.conditioned() {
        let sizes: Vec<usize> = batch.iter().map(Task::len).collect();
        let tps = task_params(&ctx, cfg, hazy, &sizes)?;
        let per_image: Vec<Var> = tps
            .iter()
            .zip(&sizes)
            .flat_map(|(tp, &k)| std::iter::repeat(tp.features).take(k))
            .collect();
        let restored = dehaze(&ctx, hazy, Some(concat0(&per_image)))?;

        let feats: Vec<Var> = tps.iter().map(|tp| tp.features).collect();
        let labels = domain_labels(cfg, batch)?;
        let probs = classify_domains(&ctx, concat0(&feats));
        ce = Some(ce_loss(probs, &labels)?);
        predictions = DomainPrediction::from_probs(probs, Some(&labels));
        if cfg.train.dcr_enabled {
            let conf: Vec<f64> = predictions.iter().map(|p| p.confidence.unwrap_or(0.0)).collect();
            let sel = select_positive(&domains, &conf)?;
            dcr = Some(dcr_loss(&sel, &feats, &cfg.loss.cx, cfg.loss.sigma)?);
        }
        restored
    } else {
        dehaze(&ctx, hazy, None)?
    };

    let terms = LossTerms {
        pixel: pixel_loss(restored, clear, cfg.loss.pixel_reduction)?,
        ssim: ssim_loss(restored, clear)?,
        cr: cr_loss(restored, clear, hazy, extractor)?,
        ce,
        dcr,
    };
    let (total, losses) = total_loss(&terms, &cfg.loss.weights())?;
    let objective = total.item();
    let mut grads = ctx.gradients(&g.backward(total));
    let bn = ctx.take_bn_stats();
    drop(ctx);
    let grad_norm = grads
        .values()
        .flat_map(|t| t.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    clip_per_module(&mut grads, cfg.train.grad_clip);

    state.adam.update(
        state
            .params
            .params_mut()
            .filter_map(|(k, t)| grads.get(k).map(|gr| (k, t, gr))),
    );
    state.params.apply_bn_stats(&bn);
    state.step += 1;
    if let Some(name) = state.params.first_non_finite() {
        return Err(Error::NonFinite {
            what: format!("parameter {name} after step {}", state.step),
            detail: format!("{losses:?}"),
        });
    }
    Ok(StepOutput {
        losses,
        domains,
        predictions,
        grad_norm,
        objective,
    })
}

/// One line of the metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub pixel: f64,
    pub ssim: f64,
    pub cr: f64,
    pub ce: f64,
    pub dcr: f64,
    pub total: f64,
}

impl MetricsRecord {
    pub fn new(step: u64, l: &LossBreakdown) -> Self {
        Self {
            step,
            pixel: l.pixel,
            ssim: l.ssim,
            cr: l.cr,
            ce: l.ce,
            dcr: l.dcr,
            total: l.total,
        }
    }
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const FINAL_CHECKPOINT: &str = "final.safetensors";

/// Owns everything a training run mutates.
pub struct Trainer {
    pub cfg: RunConfig,
    pub state: TrainState,
    pub scenes: SceneBank,
    pub extractor: Extractor,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let state = TrainState::init(&cfg);
        Self::with_state(cfg, state)
    }

    /// Continues from a saved state.
    pub fn resume(path: &Path) -> Result<Self> {
        let (state, cfg) = TrainState::load(path)?;
        Self::with_state(cfg, state)
    }

    fn with_state(cfg: RunConfig, state: TrainState) -> Result<Self> {
        let scenes = training_scenes(&cfg);
        let extractor = load_extractor(&cfg)?;
        Ok(Self {
            cfg,
            state,
            scenes,
            extractor,
        })
    }

    pub fn next_batch(&mut self) -> Result<Vec<Task>> {
        sample_batch(
            &self.cfg.data.train_domains,
            &self.cfg.train,
            &self.scenes,
            &mut self.state.rng,
        )
    }

    pub fn step(&mut self) -> Result<StepOutput> {
        let batch = self.next_batch()?;
        train_step(&mut self.state, &batch, &self.cfg, &self.extractor)
    }

    /// Runs until `train.max_steps`, writing metrics and checkpoints to
    /// `out_dir`. Returns the final checkpoint path.
    pub fn run(&mut self, out_dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        self.cfg.save(&out_dir.join(CONFIG_FILE))?;
        let metrics_path = out_dir.join(METRICS_FILE);
        let file = if self.state.step == 0 {
            File::create(&metrics_path)
        } else {
            fs::OpenOptions::new().append(true).create(true).open(&metrics_path)
        }
        .map_err(|e| Error::io(&metrics_path, e))?;
        let mut metrics = BufWriter::new(file);
        let every = self.cfg.train.checkpoint_every;
        while self.state.step < self.cfg.train.max_steps {
            let out = self.step()?;
            let rec = MetricsRecord::new(self.state.step, &out.losses);
            serde_json::to_writer(&mut metrics, &rec).expect("metrics serialize");
            metrics
                .write_all(b"\n")
                .and_then(|_| metrics.flush())
                .map_err(|e| Error::io(&metrics_path, e))?;
            if self.state.step % 50 == 0 {
                log::info!("step {} total {:.5}", self.state.step, out.losses.total);
            }
            if every > 0 && self.state.step % every == 0 && self.state.step < self.cfg.train.max_steps {
                let path = out_dir.join(format!("step-{:06}.safetensors", self.state.step));
                self.state.save(&path, &self.cfg)?;
            }
        }
        let final_path = out_dir.join(FINAL_CHECKPOINT);
        self.state.save(&final_path, &self.cfg)?;
        Ok(final_path)
    }
}

/// Clear scenes for training, derived from the training seed.
pub fn training_scenes(cfg: &RunConfig) -> SceneBank {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    rng.set_stream(5);
    SceneBank::generate(&cfg.data.scene, cfg.train.scene_count, &mut rng)
}

pub fn load_extractor(cfg: &RunConfig) -> Result<Extractor> {
    if cfg.loss.extractor_weights.is_empty() {
        Ok(Extractor::default())
    } else {
        Extractor::load(Path::new(&cfg.loss.extractor_weights))
    }
}

/// Trains from scratch per `cfg` and returns the final checkpoint path.
pub fn fit(cfg: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    Trainer::new(cfg.clone())?.run(out_dir)
}

/// Domain predictions for tasks, using running normalization statistics.
pub fn predict_domains(params: &ParamSet, cfg: &RunConfig, tasks: &[Task]) -> Result<Vec<DomainPrediction>> {
    if !cfg.conditioned() {
        return Err(Error::InvalidInput("the unconditioned model has no domain classifier".into()));
    }
    let g = Graph::no_grad();
    let ctx = Ctx::new(&g, params, Mode::Eval);
    let hazy = g.constant(batch_images(tasks, |p| &p.hazy)?);
    let sizes: Vec<usize> = tasks.iter().map(Task::len).collect();
    let tps = task_params(&ctx, cfg, hazy, &sizes)?;
    let feats: Vec<Var> = tps.iter().map(|tp| tp.features).collect();
    let labels = domain_labels(cfg, tasks)?;
    Ok(DomainPrediction::from_probs(
        classify_domains(&ctx, concat0(&feats)),
        Some(&labels),
    ))
}

/// A trained model ready for single-image restoration.
#[derive(Clone, Debug)]
pub struct Dehazer {
    pub cfg: RunConfig,
    pub params: ParamSet,
}

impl Dehazer {
    pub fn new(cfg: RunConfig, params: ParamSet) -> Self {
        Self { cfg, params }
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        let (state, cfg) = TrainState::load(path)?;
        Ok(Self::new(cfg, state.params))
    }

    /// Restores `hazy`. `context` holds unlabeled hazy images from the same
    /// domain; they only shape the task parameter. No gradients are recorded.
    pub fn dehaze(&self, hazy: &Image, context: &[Image]) -> Result<Image> {
        let (h, w) = hazy.dims();
        let padded = hazy.pad_to_multiple(ADAPT_STRIDE);
        let g = Graph::no_grad();
        let ctx = Ctx::new(&g, &self.params, Mode::Eval);
        let x = g.constant(padded.to_tensor());
        let restored = if self.cfg.conditioned() {
            let mut set = vec![padded.clone()];
            for (i, c) in context.iter().enumerate() {
                let c = if c.dims() == (h, w) {
                    c.clone()
                } else {
                    log::warn!(
                        "context image {i} is {}x{}, resizing to {h}x{w}",
                        c.height(),
                        c.width()
                    );
                    c.resize(h, w)?
                };
                set.push(c.pad_to_multiple(ADAPT_STRIDE));
            }
            let refs: Vec<&Image> = set.iter().collect();
            let all = g.constant(Image::batch_tensor(&refs)?);
            let tp = task_params(&ctx, &self.cfg, all, &[set.len()])?.remove(0);
            dehaze(&ctx, x, Some(tp.features))?
        } else {
            dehaze(&ctx, x, None)?
        };
        Image::from_tensor(&restored.value(), 0)?.crop(0, 0, h, w)
    }
}

/// Loads `checkpoint` and restores one image.
pub fn infer(checkpoint: &Path, hazy: &Image, context: &[Image]) -> Result<Image> {
    Dehazer::from_checkpoint(checkpoint)?.dehaze(hazy, context)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hazemeta_grad::Tensor;

    #[test]
    fn clipping_is_per_module() {
        let mut grads = BTreeMap::new();
        grads.insert("backbone.a.weight".to_string(), Tensor::new(&[2], vec![3.0, 4.0]));
        grads.insert("backbone.b.weight".to_string(), Tensor::new(&[1], vec![0.0]));
        grads.insert("adapt.out.weight".to_string(), Tensor::new(&[1], vec![0.5]));
        clip_per_module(&mut grads, 1.0);
        let a = grads["backbone.a.weight"].data();
        assert!((a[0] - 0.6).abs() < 1e-15 && (a[1] - 0.8).abs() < 1e-15);
        assert_eq!(grads["adapt.out.weight"].data(), &[0.5]);
        let mut off = BTreeMap::from([("x.w".to_string(), Tensor::new(&[1], vec![9.0]))]);
        clip_per_module(&mut off, 0.0);
        assert_eq!(off["x.w"].data(), &[9.0]);
    }
}
