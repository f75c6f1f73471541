//! RGB images and depth maps.
//!
//! [`Image`] stores three planar channels (`c, y, x` order) of unitless
//! radiance in `[0, 1]`, which is also the layout the networks consume.

use std::path::Path;

use hazemeta_grad::Tensor;

use crate::error::{Error, Result};

/// Smallest accepted image side.
pub const MIN_SIDE: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Validates size and range. `data` is planar RGB.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::InvalidInput(format!(
                "image is {height}x{width}, both sides must be at least {MIN_SIDE}"
            )));
        }
        if data.len() != 3 * height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} RGB image needs {} values, got {}",
                3 * height * width,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image from `f(channel, y, x)`, clamping into `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(clamp_unit(f(c, y, x)));
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; 3 * height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    /// `[1, 3, h, w]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, 3, self.height, self.width], self.data.clone())
    }

    /// Stacks equally sized images into `[n, 3, h, w]`.
    pub fn batch_tensor(images: &[&Image]) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidInput("empty image batch".into()))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for im in images {
            if im.dims() != (h, w) {
                return Err(Error::Shape(format!(
                    "batch mixes {h}x{w} and {}x{} images",
                    im.height, im.width
                )));
            }
            data.extend_from_slice(&im.data);
        }
        Ok(Tensor::new(&[images.len(), 3, h, w], data))
    }

    /// Sample `index` of an `[n, 3, h, w]` tensor, clamped into `[0, 1]`.
    pub fn from_tensor(t: &Tensor, index: usize) -> Result<Self> {
        if t.rank() != 4 || t.shape()[1] != 3 {
            return Err(Error::Shape(format!("expected [n, 3, h, w], got {:?}", t.shape())));
        }
        let (n, _, h, w) = t.dims4();
        if index >= n {
            return Err(Error::Shape(format!("sample {index} of a batch of {n}")));
        }
        let plane = 3 * h * w;
        let data = t.data()[index * plane..(index + 1) * plane]
            .iter()
            .map(|&v| clamp_unit(v))
            .collect();
        Self::new(h, w, data)
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Shape(format!(
                "crop {height}x{width}+{top}+{left} exceeds {}x{}",
                self.height, self.width
            )));
        }
        Self::from_fn(height, width, |c, y, x| self.get(c, top + y, left + x))
    }

    pub fn flip_horizontal(&self) -> Self {
        let w = self.width;
        Self::from_fn(self.height, w, |c, y, x| self.get(c, y, w - 1 - x))
            .expect("flip preserves validity")
    }

    /// Rotates by `quarter_turns * 90` degrees counter-clockwise.
    pub fn rotate90(&self, quarter_turns: usize) -> Self {
        let mut out = self.clone();
        for _ in 0..quarter_turns % 4 {
            let (h, w) = (out.height, out.width);
            let src = out.clone();
            out = Self::from_fn(w, h, |c, y, x| src.get(c, x, w - 1 - y))
                .expect("rotation preserves validity");
        }
        out
    }

    /// Bilinear resize with half-pixel centres.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if (height, width) == self.dims() {
            return Ok(self.clone());
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        Self::from_fn(height, width, |c, y, x| {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
            let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
            let top = self.get(c, y0, x0) * (1.0 - tx) + self.get(c, y0, x1) * tx;
            let bot = self.get(c, y1, x0) * (1.0 - tx) + self.get(c, y1, x1) * tx;
            top * (1.0 - ty) + bot * ty
        })
    }

    /// Reflect-pads bottom and right so both sides become multiples of `m`.
    pub fn pad_to_multiple(&self, m: usize) -> Self {
        let h = self.height.div_ceil(m) * m;
        let w = self.width.div_ceil(m) * m;
        if (h, w) == self.dims() {
            return self.clone();
        }
        let reflect = |i: usize, n: usize| {
            if i < n {
                i
            } else {
                let over = i - n + 1;
                n.saturating_sub(1 + over).min(n - 1)
            }
        };
        Self::from_fn(h, w, |c, y, x| {
            self.get(c, reflect(y, self.height), reflect(x, self.width))
        })
        .expect("padding preserves validity")
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        Self::from_rgb8(&img)
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Result<Self> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        Self::from_fn(h, w, |c, y, x| {
            f64::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
        })
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c| (self.get(c, y as usize, x as usize) * 255.0).round() as u8;
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Non-negative scene depth in arbitrary units.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} depth map needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!("depth value {bad} must be finite and >= 0")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            self.data.iter().map(|d| d * factor).collect(),
        )
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Shape("depth crop out of bounds".into()));
        }
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            data.extend_from_slice(&self.data[(top + y) * self.width + left..][..width]);
        }
        Self::new(height, width, data)
    }
}
