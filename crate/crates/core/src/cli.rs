//! Command-line front end.
//!
//! ```text
//! hazemeta <command> [--config FILE] [--workdir DIR] [--section.key=value ...] [options]
//!
//!   synth-data  [--out DIR] [--count N]         synthetic hazy/clear folders per domain
//!   train       [--out DIR] [--resume CKPT]     episodic training
//!   eval        --checkpoint CKPT [--out DIR] [--split held_out|train|all]
//!   ablate      [--out DIR]                     variant table and plot
//!   dehaze      --checkpoint CKPT --input PNG --output PNG [--context DIR]
//!   gradcheck   [--seed N]                      finite-difference suite
//! ```
//!
//! Exit codes: 0 success, 2 usage or config error, 3 numeric failure,
//! 4 IO error.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_config, RunConfig};
use crate::datagen::{
    ingest_image_folder, synthesize_hazy, write_manifest, DomainSpec, FolderDataset, ManifestEntry, PairingRule,
    SceneBank,
};
use crate::error::{Error, Result};
use crate::evaluate::ablation::run_ablation;
use crate::evaluate::evaluate_checkpoint;
use crate::gradcheck::run_suite;
use crate::image::Image;
use crate::trainer::{Dehazer, Trainer, CONFIG_FILE};

pub const USAGE: &str = "usage: hazemeta <synth-data|train|eval|ablate|dehaze|gradcheck> \
[--config FILE] [--workdir DIR] [--section.key=value ...] [options]";

const COMMANDS: [&str; 6] = ["synth-data", "train", "eval", "ablate", "dehaze", "gradcheck"];

/// Parsed command line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Args {
    pub command: String,
    pub config: Option<PathBuf>,
    pub workdir: PathBuf,
    /// `section.key=value` config overrides, in order.
    pub overrides: Vec<String>,
    /// Command options such as `--out`.
    pub options: BTreeMap<String, String>,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(format!("{}\n{USAGE}", msg.into()))
}

impl Args {
    pub fn parse<I: IntoIterator<Item = String>>(args: I) -> Result<Self> {
        let mut it = args.into_iter();
        let command = it.next().ok_or_else(|| usage("missing command"))?;
        if !COMMANDS.contains(&command.as_str()) {
            return Err(usage(format!("unknown command `{command}`")));
        }
        let mut out = Args {
            command,
            workdir: PathBuf::from("."),
            ..Args::default()
        };
        while let Some(arg) = it.next() {
            let Some(flag) = arg.strip_prefix("--") else {
                return Err(usage(format!("unexpected argument `{arg}`")));
            };
            let (name, value) = match flag.split_once('=') {
                Some((n, v)) => (n.to_string(), v.to_string()),
                None => {
                    let v = it.next().ok_or_else(|| usage(format!("--{flag} needs a value")))?;
                    (flag.to_string(), v)
                }
            };
            match name.as_str() {
                "config" => out.config = Some(PathBuf::from(value)),
                "workdir" => out.workdir = PathBuf::from(value),
                n if n.contains('.') => out.overrides.push(format!("{n}={value}")),
                _ => {
                    out.options.insert(name, value);
                }
            }
        }
        Ok(out)
    }

    /// `p` relative to the working directory unless absolute.
    pub fn path(&self, p: impl AsRef<Path>) -> PathBuf {
        self.workdir.join(p)
    }

    fn take(&mut self, name: &str) -> Option<String> {
        self.options.remove(name)
    }

    fn require(&mut self, name: &str) -> Result<String> {
        self.take(name)
            .ok_or_else(|| usage(format!("`{}` needs --{name}", self.command)))
    }

    fn take_path(&mut self, name: &str, default: &str) -> PathBuf {
        let p = self.take(name).unwrap_or_else(|| default.to_string());
        self.path(p)
    }

    fn finish(&self) -> Result<()> {
        match self.options.keys().next() {
            Some(k) => Err(usage(format!("unknown option --{k} for `{}`", self.command))),
            None => Ok(()),
        }
    }

    fn resolve_config(&self) -> Result<RunConfig> {
        let file = self.config.as_ref().map(|p| self.path(p));
        parse_config(file.as_deref(), &self.overrides)
    }
}

fn echo_and_save(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let text = cfg.to_toml();
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "# resolved config (hash {})\n{text}", cfg.hash());
    cfg.save(&dir.join(CONFIG_FILE))
}

fn parse_num<T: std::str::FromStr>(name: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| usage(format!("--{name} expects a number, got `{v}`")))
}

/// Writes `count` synthetic pairs per domain as PNG folders plus a manifest.
pub fn synth_data(cfg: &RunConfig, domains: &[DomainSpec], count: usize, out: &Path) -> Result<Vec<ManifestEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    rng.set_stream(6);
    let bank = SceneBank::generate(&cfg.data.scene, count, &mut rng);
    let mut entries = Vec::new();
    for d in domains {
        let root = out.join(format!("domain-{}", d.id));
        for sub in ["hazy", "clear"] {
            std::fs::create_dir_all(root.join(sub)).map_err(|e| Error::io(root.join(sub), e))?;
        }
        let mut haze_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ d.rng_seed);
        for (i, s) in bank.scenes().iter().enumerate() {
            let (beta, a) = d.draw_haze(&mut haze_rng);
            let hazy = synthesize_hazy(&s.clear, &s.depth.scaled(d.depth_bias)?, beta, a)?;
            let name = format!("{i:04}.png");
            let (hp, cp) = (root.join("hazy").join(&name), root.join("clear").join(&name));
            hazy.save_png(&hp)?;
            s.clear.save_png(&cp)?;
            entries.push(ManifestEntry {
                hazy_path: hp.strip_prefix(out).unwrap_or(&hp).to_path_buf(),
                clear_path: cp.strip_prefix(out).unwrap_or(&cp).to_path_buf(),
                domain_id: d.id,
            });
        }
    }
    write_manifest(&out.join("manifest.jsonl"), &entries)?;
    Ok(entries)
}

fn eval_domains(cfg: &RunConfig, split: &str) -> Result<Vec<DomainSpec>> {
    let d = &cfg.data;
    Ok(match split {
        "held_out" => d.held_out_domains.clone(),
        "train" => d.train_domains.clone(),
        "all" => d.train_domains.iter().chain(&d.held_out_domains).cloned().collect(),
        other => return Err(usage(format!("--split must be held_out, train or all, got `{other}`"))),
    })
}

/// Runs a parsed command.
pub fn execute(mut args: Args) -> Result<()> {
    match args.command.as_str() {
        "synth-data" => {
            let out = args.take_path("out", "data");
            let count = args.take("count").map(|v| parse_num("count", &v)).transpose()?.unwrap_or(16);
            args.finish()?;
            let cfg = args.resolve_config()?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            echo_and_save(&cfg, &out)?;
            let domains = eval_domains(&cfg, "all")?;
            let entries = synth_data(&cfg, &domains, count, &out)?;
            println!("wrote {} pairs to {}", entries.len(), out.display());
        }
        "train" => {
            let out = args.take_path("out", "runs/train");
            let resume = args.take("resume").map(|p| args.path(p));
            args.finish()?;
            let mut trainer = match resume {
                Some(ckpt) => {
                    if args.config.is_some() || !args.overrides.is_empty() {
                        log::warn!("--resume uses the config stored in the checkpoint; --config and overrides are ignored");
                    }
                    Trainer::resume(&ckpt)?
                }
                None => Trainer::new(args.resolve_config()?)?,
            };
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            echo_and_save(&trainer.cfg, &out)?;
            let ckpt = trainer.run(&out)?;
            println!("final checkpoint: {}", ckpt.display());
        }
        "eval" => {
            let ckpt = args.require("checkpoint")?;
            let ckpt = args.path(ckpt);
            let out = args.take_path("out", "runs/eval");
            let split = args.take("split").unwrap_or_else(|| "held_out".into());
            args.finish()?;
            let cfg = args.resolve_config()?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            echo_and_save(&cfg, &out)?;
            let report = evaluate_checkpoint(&ckpt, &eval_domains(&cfg, &split)?, &cfg.eval)?;
            report.save(&out, "eval")?;
            print!("{}", report.to_csv());
        }
        "ablate" => {
            let out = args.take_path("out", "runs/ablation");
            args.finish()?;
            let cfg = args.resolve_config()?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            echo_and_save(&cfg, &out)?;
            let table = run_ablation(&cfg, &out)?;
            print!("{}", table.to_csv());
        }
        "dehaze" => {
            let ckpt = args.require("checkpoint")?;
            let input = args.require("input")?;
            let output = args.require("output")?;
            let (ckpt, input, output) = (args.path(ckpt), args.path(input), args.path(output));
            let context_dir = args.take("context").map(|p| args.path(p));
            args.finish()?;
            let dehazer = Dehazer::from_checkpoint(&ckpt)?;
            let hazy = Image::load_png(&input)?;
            let context = match context_dir {
                Some(dir) => match ingest_image_folder(&dir, &PairingRule::HazyOnly)? {
                    FolderDataset::Hazy(images) => images,
                    FolderDataset::Pairs(_) => unreachable!("hazy-only rule"),
                },
                None => Vec::new(),
            };
            let restored = dehazer.dehaze(&hazy, &context)?;
            if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            restored.save_png(&output)?;
            let snapshot = output.with_extension("config.toml");
            dehazer.cfg.save(&snapshot)?;
            println!(
                "restored {} with {} context image(s) -> {}",
                input.display(),
                context.len(),
                output.display()
            );
        }
        "gradcheck" => {
            let seed = args.take("seed").map(|v| parse_num("seed", &v)).transpose()?.unwrap_or(0);
            args.finish()?;
            let cases = run_suite(seed);
            for c in &cases {
                println!("{}", c.summary());
            }
            if let Some(c) = cases.iter().find(|c| !c.passed()) {
                return Err(Error::NonFinite {
                    what: format!("gradient check {}", c.name),
                    detail: format!("{:?}", c.report.worst),
                });
            }
        }
        _ => unreachable!("validated in Args::parse"),
    }
    Ok(())
}

/// Parses `args` (without the program name), runs the command and returns
/// the process exit code.
pub fn run<I: IntoIterator<Item = String>>(args: I) -> i32 {
    match Args::parse(args).and_then(execute) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
