use crate::gemm::gemm;
use crate::graph::Var;
use crate::tensor::Tensor;

/// Spatial geometry of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        assert!(kernel >= 1 && stride >= 1);
        Self {
            kernel,
            stride,
            padding,
        }
    }

    /// Output extent along one axis, `None` when the padded input is smaller
    /// than the kernel.
    pub fn output_len(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }
}

struct Im2Col {
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    geo: ConvGeometry,
}

impl Im2Col {
    fn rows(&self) -> usize {
        self.c * self.geo.kernel * self.geo.kernel
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        let k = self.geo.kernel;
        let (s, p) = (self.geo.stride as isize, self.geo.padding as isize);
        let ncols = self.cols();
        for c in 0..self.c {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut out[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.ho {
                        let iy = oy as isize * s + ki as isize - p;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in line.iter_mut().enumerate() {
                            let ix = ox as isize * s + kj as isize - p;
                            *d = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn adjoint(&self, cols: &[f64], dx: &mut [f64]) {
        let k = self.geo.kernel;
        let (s, p) = (self.geo.stride as isize, self.geo.padding as isize);
        let ncols = self.cols();
        for c in 0..self.c {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.ho {
                        let iy = oy as isize * s + ki as isize - p;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let line = &src[oy * self.wo..(oy + 1) * self.wo];
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in line.iter().enumerate() {
                            let ix = ox as isize * s + kj as isize - p;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<'g> Var<'g> {
    /// 2-D convolution (cross-correlation) of `[n, c, h, w]` with `[o, c, k, k]`
    /// weights and optional `[o]` bias, zero padded.
    pub fn conv2d(self, weight: Var<'g>, bias: Option<Var<'g>>, geo: ConvGeometry) -> Var<'g> {
        let x = self.value();
        let w = weight.value();
        let (n, c, h, wd) = x.dims4();
        let (o, wc, kh, kw) = w.dims4();
        assert_eq!(wc, c, "conv2d: weight expects {wc} input channels, got {c}");
        assert!(kh == geo.kernel && kw == geo.kernel, "conv2d: kernel size mismatch");
        let ho = geo.output_len(h).expect("conv2d: input smaller than kernel");
        let wo = geo.output_len(wd).expect("conv2d: input smaller than kernel");
        let im = Im2Col {
            c,
            h,
            w: wd,
            ho,
            wo,
            geo,
        };
        let (rows, ncols) = (im.rows(), im.cols());
        let bias_val = bias.map(|b| {
            let b = b.value();
            assert_eq!(b.len(), o, "conv2d: bias length");
            b
        });

        let mut cols = vec![0.0; n * rows * ncols];
        let mut out = vec![0.0; n * o * ncols];
        let in_plane = c * h * wd;
        for i in 0..n {
            let col = &mut cols[i * rows * ncols..(i + 1) * rows * ncols];
            im.forward(&x.data()[i * in_plane..(i + 1) * in_plane], col);
            let dst = &mut out[i * o * ncols..(i + 1) * o * ncols];
            if let Some(b) = &bias_val {
                for (ch, chunk) in dst.chunks_mut(ncols).enumerate() {
                    chunk.fill(b.data()[ch]);
                }
            }
            let beta = if bias_val.is_some() { 1.0 } else { 0.0 };
            gemm(o, rows, ncols, 1.0, w.data(), false, col, false, beta, dst);
        }
        let out = Tensor::new(&[n, o, ho, wo], out);

        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        let wshape = w.shape().to_vec();
        self.graph.record(out, &parents, move |g, need| {
            let dx = need[0].then(|| {
                let mut dx = Tensor::zeros(&[n, c, h, wd]);
                let mut dcol = vec![0.0; rows * ncols];
                for i in 0..n {
                    let gi = &g.data()[i * o * ncols..(i + 1) * o * ncols];
                    gemm(rows, o, ncols, 1.0, w.data(), true, gi, false, 0.0, &mut dcol);
                    im.adjoint(&dcol, &mut dx.data_mut()[i * in_plane..(i + 1) * in_plane]);
                }
                dx
            });
            let dw = need[1].then(|| {
                let mut dw = Tensor::zeros(&wshape);
                for i in 0..n {
                    let gi = &g.data()[i * o * ncols..(i + 1) * o * ncols];
                    let col = &cols[i * rows * ncols..(i + 1) * rows * ncols];
                    gemm(o, ncols, rows, 1.0, gi, false, col, true, 1.0, dw.data_mut());
                }
                dw
            });
            let mut res = vec![dx, dw];
            if need.len() == 3 {
                res.push(need[2].then(|| {
                    let mut db = vec![0.0; o];
                    for (idx, chunk) in g.data().chunks(ncols).enumerate() {
                        db[idx % o] += chunk.iter().sum::<f64>();
                    }
                    Tensor::new(&[o], db)
                }));
            }
            res
        })
    }
}
