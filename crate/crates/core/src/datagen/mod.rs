//! Multi-domain hazy/clear pair synthesis.
//!
//! Haze follows the atmospheric scattering model: a clear radiance `J` seen
//! through transmission `t = exp(-beta * d)` under airlight `A` becomes
//! `I = J * t + A * (1 - t)`. A domain is a distribution over `(beta, A)` plus
//! a multiplicative depth bias standing in for per-dataset depth error.

mod folder;
mod procedural;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use folder::{ingest_image_folder, read_manifest, write_manifest, FolderDataset, ManifestEntry, PairingRule};
pub use procedural::{procedural_clear_and_depth, SceneBank, SceneConfig};

use crate::error::{Error, Result};
use crate::image::{clamp_unit, DepthMap, Image};

/// One synthetic haze domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub id: usize,
    /// Scattering coefficient per depth unit, `[min, max]`.
    pub beta_range: [f64; 2],
    /// Atmospheric light, `[min, max]`.
    pub a_range: [f64; 2],
    pub depth_bias: f64,
    pub rng_seed: u64,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let [b0, b1] = self.beta_range;
        let [a0, a1] = self.a_range;
        let bad = |m: String| Err(Error::InvalidInput(format!("domain {}: {m}", self.id)));
        if !(b0 > 0.0 && b0 <= b1 && b1.is_finite()) {
            return bad(format!("beta_range {:?} must satisfy 0 < min <= max", self.beta_range));
        }
        if !(a0 > 0.0 && a0 <= a1 && a1 <= 1.0) {
            return bad(format!("a_range {:?} must lie in (0, 1]", self.a_range));
        }
        if !(self.depth_bias > 0.0 && self.depth_bias.is_finite()) {
            return bad(format!("depth_bias {} must be > 0", self.depth_bias));
        }
        Ok(())
    }

    /// Two training domains and one held-out domain used by the desk setup.
    pub fn desk_domains() -> [DomainSpec; 3] {
        [
            DomainSpec {
                id: 0,
                beta_range: [0.4, 0.8],
                a_range: [0.8, 1.0],
                depth_bias: 1.0,
                rng_seed: 11,
            },
            DomainSpec {
                id: 1,
                beta_range: [1.0, 1.6],
                a_range: [0.7, 0.9],
                depth_bias: 1.3,
                rng_seed: 23,
            },
            DomainSpec {
                id: 2,
                beta_range: [1.8, 2.4],
                a_range: [0.85, 1.0],
                depth_bias: 0.8,
                rng_seed: 37,
            },
        ]
    }

    /// Draws `(beta, A)` uniformly from the domain ranges.
    pub fn draw_haze<R: Rng>(&self, rng: &mut R) -> (f64, f64) {
        let beta = uniform(rng, self.beta_range);
        let a = uniform(rng, self.a_range);
        (beta, a)
    }
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Per-pixel transmission `exp(-beta * depth)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmissionMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

pub fn transmission_map(depth: &DepthMap, beta: f64) -> Result<TransmissionMap> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidInput(format!("beta {beta} must be finite and >= 0")));
    }
    if depth.data().iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidInput("depth map has non-finite entries".into()));
    }
    Ok(TransmissionMap {
        height: depth.height(),
        width: depth.width(),
        data: depth.data().iter().map(|d| (-beta * d).exp()).collect(),
    })
}

/// Renders haze over `clear` and clips to `[0, 1]`.
pub fn synthesize_hazy(clear: &Image, depth: &DepthMap, beta: f64, airlight: f64) -> Result<Image> {
    if clear.dims() != depth.dims() {
        return Err(Error::Shape(format!(
            "clear image is {:?} but depth is {:?}",
            clear.dims(),
            depth.dims()
        )));
    }
    if !(airlight > 0.0 && airlight <= 1.0) {
        return Err(Error::InvalidInput(format!("airlight {airlight} must lie in (0, 1]")));
    }
    let t = transmission_map(depth, beta)?;
    let plane = t.data.len();
    let data = clear
        .data()
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let tv = t.data[i % plane];
            clamp_unit(j * tv + airlight * (1.0 - tv))
        })
        .collect();
    Image::new(clear.height(), clear.width(), data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub hazy: Image,
    pub clear: Image,
    pub domain_id: usize,
}

impl SamplePair {
    pub fn new(hazy: Image, clear: Image, domain_id: usize) -> Result<Self> {
        if hazy.dims() != clear.dims() {
            return Err(Error::Shape(format!(
                "hazy {:?} and clear {:?} differ in size",
                hazy.dims(),
                clear.dims()
            )));
        }
        Ok(Self {
            hazy,
            clear,
            domain_id,
        })
    }
}

/// `K` pairs from a single domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub pairs: Vec<SamplePair>,
    pub domain_id: usize,
}

impl Task {
    pub fn new(pairs: Vec<SamplePair>, domain_id: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("a task needs at least one pair".into()));
        }
        if let Some(p) = pairs.iter().find(|p| p.domain_id != domain_id) {
            return Err(Error::InvalidInput(format!(
                "task of domain {domain_id} holds a pair from domain {}",
                p.domain_id
            )));
        }
        Ok(Self { pairs, domain_id })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Samples `k` scenes from `source` and renders each under independently
/// drawn haze parameters of `domain`.
pub fn make_task<R: Rng>(domain: &DomainSpec, source: &SceneBank, k: usize, rng: &mut R) -> Result<Task> {
    if k == 0 {
        return Err(Error::InvalidInput("a task needs K >= 1".into()));
    }
    if source.is_empty() {
        return Err(Error::InvalidInput("clear-image source is empty".into()));
    }
    domain.validate()?;
    let mut pairs = Vec::with_capacity(k);
    for _ in 0..k {
        let scene = &source.scenes()[rng.gen_range(0..source.len())];
        let (beta, airlight) = domain.draw_haze(rng);
        let depth = scene.depth.scaled(domain.depth_bias)?;
        let hazy = synthesize_hazy(&scene.clear, &depth, beta, airlight)?;
        pairs.push(SamplePair::new(hazy, scene.clear.clone(), domain.id)?);
    }
    Task::new(pairs, domain.id)
}
