//! Procedural stand-ins for clear photographs with aligned depth.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::{DepthMap, Image};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Octaves of value noise in the texture.
    pub octaves: usize,
    /// Grid cells of the coarsest noise octave.
    pub base_cells: usize,
    /// Depth at the bottom edge.
    pub near: f64,
    /// Depth at the top edge.
    pub far: f64,
    /// Rectangular structures laid over the texture.
    pub structures: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 80,
            width: 80,
            octaves: 4,
            base_cells: 3,
            near: 0.1,
            far: 1.5,
            structures: 5,
        }
    }
}

impl SceneConfig {
    /// 24x24 scenes for fast tests.
    pub fn small() -> Self {
        Self {
            height: 24,
            width: 24,
            ..Self::default()
        }
    }
}

/// Smooth noise in `[0, 1]`: random lattice values blended with smoothstep.
fn value_noise<R: Rng>(h: usize, w: usize, cells: usize, rng: &mut R) -> Vec<f64> {
    let n = cells + 1;
    let lattice: Vec<f64> = (0..n * n).map(|_| rng.gen::<f64>()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = y as f64 / (h.max(2) - 1) as f64 * cells as f64;
        let y0 = (fy.floor() as usize).min(cells - 1);
        let ty = smooth(fy - y0 as f64);
        for x in 0..w {
            let fx = x as f64 / (w.max(2) - 1) as f64 * cells as f64;
            let x0 = (fx.floor() as usize).min(cells - 1);
            let tx = smooth(fx - x0 as f64);
            let v = |yy: usize, xx: usize| lattice[yy * n + xx];
            let top = v(y0, x0) * (1.0 - tx) + v(y0, x0 + 1) * tx;
            let bot = v(y0 + 1, x0) * (1.0 - tx) + v(y0 + 1, x0 + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

/// A textured scene with a smooth depth ramp (far at the top).
///
/// Every pixel keeps its darkest channel at or below 0.6, mimicking the
/// low dark channel of haze-free outdoor imagery.
pub fn procedural_clear_and_depth<R: Rng>(cfg: &SceneConfig, rng: &mut R) -> (Image, DepthMap) {
    let (h, w) = (cfg.height, cfg.width);
    let cells = cfg.base_cells.max(1);

    let warp = value_noise(h, w, cells, rng);
    let tilt: f64 = rng.gen_range(-0.25..0.25);
    let mut depth = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let up = 1.0 - y as f64 / (h - 1).max(1) as f64;
            let side = x as f64 / (w - 1).max(1) as f64 - 0.5;
            let u = (up.powf(1.3) + tilt * side + 0.2 * (warp[y * w + x] - 0.5)).clamp(0.0, 1.0);
            depth.push(cfg.near + (cfg.far - cfg.near) * u);
        }
    }

    let top: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.15..0.9));
    let bottom: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.05..0.7));
    let mut planes: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let mut tex = vec![0.0; h * w];
            let mut amp = 0.3;
            for o in 0..cfg.octaves {
                let layer = value_noise(h, w, cells << o, rng);
                for (t, l) in tex.iter_mut().zip(&layer) {
                    *t += amp * (l - 0.5);
                }
                amp *= 0.55;
            }
            (0..h * w)
                .map(|i| {
                    let fy = (i / w) as f64 / (h - 1).max(1) as f64;
                    top[c] * (1.0 - fy) + bottom[c] * fy + tex[i]
                })
                .collect()
        })
        .collect();

    for _ in 0..cfg.structures {
        let bh = rng.gen_range(h / 8..=h / 3).max(2);
        let bw = rng.gen_range(w / 8..=w / 3).max(2);
        let y0 = rng.gen_range(h / 4..h - bh.min(h - h / 4));
        let x0 = rng.gen_range(0..w - bw);
        let color: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..0.85));
        let stripes = rng.gen_range(2..6);
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                let shade = if (x - x0) % stripes == 0 { 0.7 } else { 1.0 };
                for (c, plane) in planes.iter_mut().enumerate() {
                    plane[y * w + x] = color[c] * shade;
                }
            }
        }
    }

    for i in 0..h * w {
        let lo = (0..3).map(|c| planes[c][i]).fold(f64::INFINITY, f64::min);
        if lo > 0.6 {
            let s = 0.6 / lo;
            for plane in planes.iter_mut() {
                plane[i] *= s;
            }
        }
    }

    let data: Vec<f64> = planes.concat().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let clear = Image::new(h, w, data).expect("procedural image is valid");
    let depth = DepthMap::new(h, w, depth).expect("procedural depth is valid");
    (clear, depth)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub clear: Image,
    pub depth: DepthMap,
}

/// Read-only pool of clear scenes with depth.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneBank {
    scenes: Vec<Scene>,
}

impl SceneBank {
    pub fn generate<R: Rng>(cfg: &SceneConfig, count: usize, rng: &mut R) -> Self {
        let scenes = (0..count)
            .map(|_| {
                let (clear, depth) = procedural_clear_and_depth(cfg, rng);
                Scene { clear, depth }
            })
            .collect();
        Self { scenes }
    }

    pub fn from_scenes(scenes: Vec<Scene>) -> Self {
        Self { scenes }
    }

    pub fn scenes(&self) -> &[Scene] {
        &self.scenes
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}
