use crate::gemm::gemm;
use crate::graph::Var;
use crate::tensor::Tensor;

impl<'g> Var<'g> {
    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        let x = self.value();
        let old = x.shape().to_vec();
        let out = (*x).clone().reshape(shape);
        self.graph.record(out, &[self], move |g, _| {
            vec![Some(g.clone().reshape(&old))]
        })
    }

    /// `len` entries of the leading axis starting at `start`.
    pub fn slice0(self, start: usize, len: usize) -> Var<'g> {
        let x = self.value();
        let out = x.slice0(start, len);
        let shape = x.shape().to_vec();
        let inner: usize = shape[1..].iter().product();
        self.graph.record(out, &[self], move |g, _| {
            let mut dx = Tensor::zeros(&shape);
            dx.data_mut()[start * inner..(start + len) * inner].copy_from_slice(g.data());
            vec![Some(dx)]
        })
    }

    /// Concatenates two NCHW tensors along channels.
    pub fn concat_channels(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        let (n, ca, h, w) = a.dims4();
        let (nb, cb, hb, wb) = b.dims4();
        assert_eq!((n, h, w), (nb, hb, wb), "concat_channels: batch/spatial mismatch");
        let plane = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * plane);
        for i in 0..n {
            out.extend_from_slice(&a.data()[i * ca * plane..(i + 1) * ca * plane]);
            out.extend_from_slice(&b.data()[i * cb * plane..(i + 1) * cb * plane]);
        }
        let out = Tensor::new(&[n, ca + cb, h, w], out);
        self.graph.record(out, &[self, other], move |g, need| {
            let c = ca + cb;
            let split = |off: usize, ch: usize| {
                let mut d = Vec::with_capacity(n * ch * plane);
                for i in 0..n {
                    let base = (i * c + off) * plane;
                    d.extend_from_slice(&g.data()[base..base + ch * plane]);
                }
                Tensor::new(&[n, ch, h, w], d)
            };
            vec![need[0].then(|| split(0, ca)), need[1].then(|| split(ca, cb))]
        })
    }

    pub fn transpose2d(self) -> Var<'g> {
        let x = self.value();
        assert_eq!(x.rank(), 2, "transpose2d needs a matrix");
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let t = |src: &Tensor, rows: usize, cols: usize| {
            let mut d = vec![0.0; rows * cols];
            for i in 0..rows {
                for j in 0..cols {
                    d[j * rows + i] = src.data()[i * cols + j];
                }
            }
            Tensor::new(&[cols, rows], d)
        };
        let out = t(&x, r, c);
        self.graph
            .record(out, &[self], move |g, _| vec![Some(t(g, c, r))])
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(self, other: Var<'g>) -> Var<'g> {
        matmul_impl(self, other, false)
    }

    /// `a * b^T` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(self, other: Var<'g>) -> Var<'g> {
        matmul_impl(self, other, true)
    }
}

fn matmul_impl<'g>(a: Var<'g>, b: Var<'g>, b_transposed: bool) -> Var<'g> {
    let (av, bv) = (a.value(), b.value());
    assert!(av.rank() == 2 && bv.rank() == 2, "matmul needs matrices");
    let (m, k) = (av.shape()[0], av.shape()[1]);
    let (n, kb) = if b_transposed {
        (bv.shape()[0], bv.shape()[1])
    } else {
        (bv.shape()[1], bv.shape()[0])
    };
    assert_eq!(k, kb, "matmul inner dimension mismatch");
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, 1.0, av.data(), false, bv.data(), b_transposed, 0.0, &mut out);
    let out = Tensor::new(&[m, n], out);
    a.graph.record(out, &[a, b], move |g, need| {
        let da = need[0].then(|| {
            // dA = G * op(B)^T
            let mut d = vec![0.0; m * k];
            gemm(m, n, k, 1.0, g.data(), false, bv.data(), !b_transposed, 0.0, &mut d);
            Tensor::new(&[m, k], d)
        });
        let db = need[1].then(|| {
            if b_transposed {
                // B is [n, k]; dB = G^T * A
                let mut d = vec![0.0; n * k];
                gemm(n, m, k, 1.0, g.data(), true, av.data(), false, 0.0, &mut d);
                Tensor::new(&[n, k], d)
            } else {
                // dB = A^T * G
                let mut d = vec![0.0; k * n];
                gemm(k, m, n, 1.0, av.data(), true, g.data(), false, 0.0, &mut d);
                Tensor::new(&[k, n], d)
            }
        });
        vec![da, db]
    })
}

/// Concatenates along the leading axis. The same var may appear repeatedly.
pub fn concat0<'g>(items: &[Var<'g>]) -> Var<'g> {
    assert!(!items.is_empty(), "concat0 of nothing");
    let graph = items[0].graph;
    let vals: Vec<_> = items.iter().map(|v| v.value()).collect();
    let refs: Vec<&Tensor> = vals.iter().map(|v| v.as_ref()).collect();
    let out = Tensor::concat0(&refs);
    let lens: Vec<usize> = vals.iter().map(|v| v.shape()[0]).collect();
    graph.record(out, items, move |g, need| {
        let mut start = 0;
        lens.iter()
            .zip(need)
            .map(|(&len, &nd)| {
                let part = nd.then(|| g.slice0(start, len));
                start += len;
                part
            })
            .collect()
    })
}
