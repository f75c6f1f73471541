//! Pooling, resampling and fixed-kernel filtering on NCHW tensors.

use crate::graph::Var;
use crate::tensor::Tensor;

/// Source taps for one output coordinate of a bilinear resize.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn bilinear_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Separable valid correlation of each `h x w` plane with `kernel` along
/// both axes.
fn blur_planes(data: &[f64], planes: usize, h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    let mut tmp = vec![0.0; h * wo];
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let src = &data[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for x in 0..wo {
                tmp[y * wo + x] = kernel.iter().zip(&row[x..x + k]).map(|(a, b)| a * b).sum();
            }
        }
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..ho {
            for (t, kv) in kernel.iter().enumerate() {
                let src_row = &tmp[(y + t) * wo..(y + t + 1) * wo];
                for (d, s) in dst[y * wo..(y + 1) * wo].iter_mut().zip(src_row) {
                    *d += kv * s;
                }
            }
        }
    }
    out
}

fn blur_planes_adjoint(g: &[f64], planes: usize, h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    let mut tmp = vec![0.0; h * wo];
    let mut out = vec![0.0; planes * h * w];
    for p in 0..planes {
        tmp.fill(0.0);
        let gp = &g[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..ho {
            for (t, kv) in kernel.iter().enumerate() {
                let dst = &mut tmp[(y + t) * wo..(y + t + 1) * wo];
                for (d, s) in dst.iter_mut().zip(&gp[y * wo..(y + 1) * wo]) {
                    *d += kv * s;
                }
            }
        }
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for x in 0..wo {
                let v = tmp[y * wo + x];
                for (t, kv) in kernel.iter().enumerate() {
                    dst[y * w + x + t] += kv * v;
                }
            }
        }
    }
    out
}

impl<'g> Var<'g> {
    /// `[n, c, h, w] -> [n, c]` spatial mean.
    pub fn global_avg_pool(self) -> Var<'g> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        let out: Vec<f64> = x
            .data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        self.graph
            .record(Tensor::new(&[n, c], out), &[self], move |g, _| {
                let mut dx = Tensor::zeros(&[n, c, h, w]);
                for (p, gv) in dx.data_mut().chunks_mut(plane).zip(g.data()) {
                    p.fill(gv / plane as f64);
                }
                vec![Some(dx)]
            })
    }

    /// Multiplies channel `c` of sample `i` by `scale[i, c]`.
    pub fn channel_scale(self, scale: Var<'g>) -> Var<'g> {
        let (x, s) = (self.value(), scale.value());
        let (n, c, h, w) = x.dims4();
        assert_eq!(s.shape(), &[n, c], "channel_scale: scale must be [n, c]");
        let plane = h * w;
        let mut out = (*x).clone();
        for (p, sv) in out.data_mut().chunks_mut(plane).zip(s.data()) {
            for v in p.iter_mut() {
                *v *= sv;
            }
        }
        self.graph.record(out, &[self, scale], move |g, need| {
            let dx = need[0].then(|| {
                let mut dx = g.clone();
                for (p, sv) in dx.data_mut().chunks_mut(plane).zip(s.data()) {
                    for v in p.iter_mut() {
                        *v *= sv;
                    }
                }
                dx
            });
            let ds = need[1].then(|| {
                let d: Vec<f64> = g
                    .data()
                    .chunks(plane)
                    .zip(x.data().chunks(plane))
                    .map(|(gp, xp)| gp.iter().zip(xp).map(|(a, b)| a * b).sum())
                    .collect();
                Tensor::new(&[n, c], d)
            });
            vec![dx, ds]
        })
    }

    pub fn upsample_nearest2x(self) -> Var<'g> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; n * c * oh * ow];
        for (dst, src) in out.chunks_mut(oh * ow).zip(x.data().chunks(h * w)) {
            for y in 0..oh {
                for xx in 0..ow {
                    dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        self.graph
            .record(Tensor::new(&[n, c, oh, ow], out), &[self], move |g, _| {
                let mut dx = Tensor::zeros(&[n, c, h, w]);
                for (dst, src) in dx.data_mut().chunks_mut(h * w).zip(g.data().chunks(oh * ow)) {
                    for y in 0..oh {
                        for xx in 0..ow {
                            dst[(y / 2) * w + xx / 2] += src[y * ow + xx];
                        }
                    }
                }
                vec![Some(dx)]
            })
    }

    /// Bilinear resize with half-pixel centres and edge clamping.
    pub fn resize_bilinear(self, oh: usize, ow: usize) -> Var<'g> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        assert!(oh > 0 && ow > 0 && h > 0 && w > 0);
        if (oh, ow) == (h, w) {
            return self.reshape(&[n, c, h, w]);
        }
        let ty = bilinear_taps(h, oh);
        let tx = bilinear_taps(w, ow);
        let mut out = vec![0.0; n * c * oh * ow];
        for (dst, src) in out.chunks_mut(oh * ow).zip(x.data().chunks(h * w)) {
            for (oy, a) in ty.iter().enumerate() {
                for (ox, b) in tx.iter().enumerate() {
                    let top = src[a.lo * w + b.lo] * (1.0 - b.frac) + src[a.lo * w + b.hi] * b.frac;
                    let bot = src[a.hi * w + b.lo] * (1.0 - b.frac) + src[a.hi * w + b.hi] * b.frac;
                    dst[oy * ow + ox] = top * (1.0 - a.frac) + bot * a.frac;
                }
            }
        }
        self.graph
            .record(Tensor::new(&[n, c, oh, ow], out), &[self], move |g, _| {
                let mut dx = Tensor::zeros(&[n, c, h, w]);
                for (dst, src) in dx.data_mut().chunks_mut(h * w).zip(g.data().chunks(oh * ow)) {
                    for (oy, a) in ty.iter().enumerate() {
                        for (ox, b) in tx.iter().enumerate() {
                            let v = src[oy * ow + ox];
                            dst[a.lo * w + b.lo] += v * (1.0 - a.frac) * (1.0 - b.frac);
                            dst[a.lo * w + b.hi] += v * (1.0 - a.frac) * b.frac;
                            dst[a.hi * w + b.lo] += v * a.frac * (1.0 - b.frac);
                            dst[a.hi * w + b.hi] += v * a.frac * b.frac;
                        }
                    }
                }
                vec![Some(dx)]
            })
    }

    /// Valid (unpadded) separable filtering of every channel with the same
    /// 1-D kernel along both axes: `[n, c, h, w] -> [n, c, h-k+1, w-k+1]`.
    pub fn separable_filter_valid(self, kernel: &[f64]) -> Var<'g> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        let k = kernel.len();
        assert!(h >= k && w >= k, "separable_filter_valid: image smaller than kernel");
        let out = blur_planes(x.data(), n * c, h, w, kernel);
        let kernel = kernel.to_vec();
        self.graph.record(
            Tensor::new(&[n, c, h + 1 - k, w + 1 - k], out),
            &[self],
            move |g, _| {
                let d = blur_planes_adjoint(g.data(), n * c, h, w, &kernel);
                vec![Some(Tensor::new(&[n, c, h, w], d))]
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use crate::{Graph, Tensor};

    #[test]
    fn resize_to_same_size_is_identity() {
        let g = Graph::no_grad();
        let x = Tensor::from_fn(&[1, 2, 3, 5], |i| i as f64);
        let y = g.constant(x.clone()).resize_bilinear(3, 5).value();
        assert_eq!(*y, x);
    }

    #[test]
    fn resize_preserves_constants() {
        let g = Graph::no_grad();
        let y = g
            .constant(Tensor::full(&[1, 1, 4, 4], 0.25))
            .resize_bilinear(7, 3)
            .value();
        assert!(y.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn filter_of_constant_is_constant_times_kernel_mass() {
        let g = Graph::no_grad();
        let y = g
            .constant(Tensor::ones(&[1, 1, 6, 6]))
            .separable_filter_valid(&[0.25, 0.5, 0.25])
            .value();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert!(y.data().iter().all(|v| (v - 1.0).abs() < 1e-15));
    }
}
