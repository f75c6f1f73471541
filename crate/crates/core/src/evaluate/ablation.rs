//! Component ablation: train each variant under shared seeds and compare
//! PSNR on the held-out domains.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::plot::{line_chart_svg, Series};
use super::{evaluate_model, EvalReport};
use crate::adapt::AdaptNet;
use crate::aggregate::Aggregator;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::trainer::{fit, Dehazer};

/// Model variants, from the unconditioned dehazer to the full method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Dehazer alone, trained with the same image losses.
    Baseline,
    /// Plain convolutional adaptation network, average aggregation.
    AnCnnMean,
    /// Context-gated adaptation network, average aggregation.
    AnCgMean,
    /// Context-gated adaptation network, distance-aware aggregation.
    AnCgDaa,
    /// Distance-aware aggregation plus the contrastive regularizer.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::AnCnnMean,
        Variant::AnCgMean,
        Variant::AnCgDaa,
        Variant::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::AnCnnMean => "AN_CNN+AO_mean",
            Variant::AnCgMean => "AN_CG+AO_mean",
            Variant::AnCgDaa => "AN_CG+AO_DAA",
            Variant::Full => "full (+DCR)",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::AnCnnMean => "an_cnn_mean",
            Variant::AnCgMean => "an_cg_mean",
            Variant::AnCgDaa => "an_cg_daa",
            Variant::Full => "full",
        }
    }

    /// `base` with the variant's network, aggregator and regularizer.
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        let (net, agg, dcr) = match self {
            Variant::Baseline => (AdaptNet::None, base.train.aggregator, false),
            Variant::AnCnnMean => (AdaptNet::PlainConv, Aggregator::Average, false),
            Variant::AnCgMean => (AdaptNet::CgConv, Aggregator::Average, false),
            Variant::AnCgDaa => (AdaptNet::CgConv, Aggregator::DistanceAware, false),
            Variant::Full => (AdaptNet::CgConv, Aggregator::DistanceAware, true),
        };
        cfg.model.adapt.net = net;
        cfg.train.aggregator = agg;
        cfg.train.dcr_enabled = dcr;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub label: String,
    /// Mean held-out PSNR per seed; `None` marks a failed run.
    pub psnr: Vec<Option<f64>>,
    pub median_psnr: Option<f64>,
    /// 1-based rank by median PSNR among successful variants.
    pub rank: Option<usize>,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub steps: u64,
    pub held_out: Vec<usize>,
    pub rows: Vec<AblationRow>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,label");
        for s in &self.seeds {
            out.push_str(&format!(",psnr_seed{s}"));
        }
        out.push_str(",median_psnr,rank,status\n");
        let fmt = |v: Option<f64>| v.map_or("FAILED".to_string(), |x| format!("{x:.4}"));
        for r in &self.rows {
            out.push_str(&format!("{},{}", r.variant.slug(), r.label));
            for p in &r.psnr {
                out.push_str(&format!(",{}", fmt(*p)));
            }
            let status = if r.failures.is_empty() { "ok" } else { "partial" };
            out.push_str(&format!(
                ",{},{},{status}\n",
                fmt(r.median_psnr),
                r.rank.map_or("-".into(), |k| k.to_string())
            ));
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let labels: Vec<&str> = self.rows.iter().map(|r| r.label.as_str()).collect();
        let mut series: Vec<Series> = self
            .seeds
            .iter()
            .enumerate()
            .map(|(i, s)| Series {
                name: format!("seed {s}"),
                values: self.rows.iter().map(|r| r.psnr[i]).collect(),
                emphasis: false,
            })
            .collect();
        series.push(Series {
            name: "median".into(),
            values: self.rows.iter().map(|r| r.median_psnr).collect(),
            emphasis: true,
        });
        line_chart_svg("Held-out PSNR by variant", "PSNR (dB)", &labels, &series)
    }

    /// Writes `ablation.csv`, `ablation.json` and `ablation_psnr.svg`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(self).expect("table serializes");
        for (name, body) in [
            ("ablation.csv", self.to_csv()),
            ("ablation.json", json),
            ("ablation_psnr.svg", self.to_svg()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

fn run_one(cfg: &RunConfig, dir: &Path) -> Result<EvalReport> {
    let ckpt = fit(cfg, dir)?;
    let dehazer = Dehazer::from_checkpoint(&ckpt)?;
    let report = evaluate_model(&dehazer, &cfg.data.held_out_domains, &cfg.eval, &ckpt.display().to_string())?;
    report.save(dir, "eval")?;
    Ok(report)
}

/// Trains every configured variant for every seed with identical data
/// streams, evaluates on the held-out domains and writes the table and plot
/// to `out_dir`. Failed runs are recorded in the table, not raised.
pub fn run_ablation(base: &RunConfig, out_dir: &Path) -> Result<AblationTable> {
    let ab = &base.ablation;
    if base.data.train_domains.len() < 2 {
        return Err(Error::config("data.train_domains", "ablation needs at least 2 training domains"));
    }
    if base.data.held_out_domains.is_empty() {
        return Err(Error::config("data.held_out_domains", "ablation needs a held-out domain"));
    }
    let mut rows = Vec::new();
    for &variant in &ab.variants {
        let mut psnr = Vec::new();
        let mut failures = Vec::new();
        for &seed in &ab.seeds {
            let mut cfg = variant.apply(base);
            cfg.train.seed = seed;
            cfg.train.max_steps = ab.steps;
            cfg.train.checkpoint_every = 0;
            let dir = out_dir.join(variant.slug()).join(format!("seed-{seed}"));
            let started = std::time::Instant::now();
            match cfg.validate().and_then(|_| run_one(&cfg, &dir)) {
                Ok(report) => {
                    let p = report.mean_psnr();
                    log::info!(
                        "{} seed {seed}: {p:.3} dB in {:.0}s",
                        variant.label(),
                        started.elapsed().as_secs_f64()
                    );
                    psnr.push(Some(p));
                }
                Err(e) => {
                    log::warn!("{} seed {seed} failed: {e}", variant.label());
                    failures.push(format!("seed {seed}: {e}"));
                    psnr.push(None);
                }
            }
        }
        let ok: Vec<f64> = psnr.iter().flatten().copied().collect();
        rows.push(AblationRow {
            variant,
            label: variant.label().to_string(),
            median_psnr: median(&ok),
            psnr,
            rank: None,
            failures,
        });
    }
    let mut order: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].median_psnr.is_some()).collect();
    order.sort_by(|&a, &b| rows[b].median_psnr.unwrap().total_cmp(&rows[a].median_psnr.unwrap()));
    for (rank, i) in order.into_iter().enumerate() {
        rows[i].rank = Some(rank + 1);
    }
    let table = AblationTable {
        seeds: ab.seeds.clone(),
        steps: ab.steps,
        held_out: base.data.held_out_domains.iter().map(|d| d.id).collect(),
        rows,
    };
    table.save(out_dir)?;
    Ok(table)
}
