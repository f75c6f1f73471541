//! Reductions and the broadcasts that undo them.
//!
//! "Rows" ops view a tensor as a `[rows, cols]` matrix over its last axis.

use crate::graph::Var;
use crate::ops::elementwise::sign;
use crate::tensor::Tensor;

impl<'g> Var<'g> {
    pub fn sum(self) -> Var<'g> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.graph.record(Tensor::scalar(x.sum()), &[self], move |g, _| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().len() as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    /// Mean over every axis but the first: `[n, ...] -> [n]`.
    pub fn mean_per_sample(self) -> Var<'g> {
        let x = self.value();
        let n = x.shape()[0];
        let inner = x.len() / n.max(1);
        let out: Vec<f64> = x
            .data()
            .chunks(inner.max(1))
            .map(|c| c.iter().sum::<f64>() / inner as f64)
            .collect();
        let shape = x.shape().to_vec();
        self.graph
            .record(Tensor::new(&[n], out), &[self], move |g, _| {
                let mut dx = Tensor::zeros(&shape);
                for (chunk, gv) in dx.data_mut().chunks_mut(inner.max(1)).zip(g.data()) {
                    chunk.fill(gv / inner as f64);
                }
                vec![Some(dx)]
            })
    }

    pub fn row_sum(self) -> Var<'g> {
        let x = self.value();
        let (rows, cols) = x.rows_cols();
        let out: Vec<f64> = x.data().chunks(cols).map(|r| r.iter().sum()).collect();
        let shape = x.shape().to_vec();
        self.graph
            .record(Tensor::new(&[rows], out), &[self], move |g, _| {
                let mut dx = Tensor::zeros(&shape);
                for (r, gv) in dx.data_mut().chunks_mut(cols).zip(g.data()) {
                    r.fill(*gv);
                }
                vec![Some(dx)]
            })
    }

    /// Row maximum; the gradient goes to the first maximal entry.
    pub fn row_max(self) -> Var<'g> {
        self.row_extreme(|a, b| a > b)
    }

    /// Row minimum; the gradient goes to the first minimal entry.
    pub fn row_min(self) -> Var<'g> {
        self.row_extreme(|a, b| a < b)
    }

    fn row_extreme(self, better: fn(f64, f64) -> bool) -> Var<'g> {
        let x = self.value();
        let (rows, cols) = x.rows_cols();
        let mut arg = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows);
        for r in x.data().chunks(cols) {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if better(v, r[best]) {
                    best = j;
                }
            }
            arg.push(best);
            out.push(r[best]);
        }
        let shape = x.shape().to_vec();
        self.graph
            .record(Tensor::new(&[rows], out), &[self], move |g, _| {
                let mut dx = Tensor::zeros(&shape);
                for (i, (&j, gv)) in arg.iter().zip(g.data()).enumerate() {
                    dx.data_mut()[i * cols + j] = *gv;
                }
                vec![Some(dx)]
            })
    }

    /// Softmax along the last axis, max-subtracted.
    pub fn softmax_rows(self) -> Var<'g> {
        let x = self.value();
        let (_, cols) = x.rows_cols();
        let mut out = (*x).clone();
        for r in out.data_mut().chunks_mut(cols) {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in r.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in r.iter_mut() {
                *v /= z;
            }
        }
        let p = std::rc::Rc::new(out.clone());
        self.graph.record(out, &[self], move |g, _| {
            let mut dx = Tensor::zeros(p.shape());
            for ((d, pr), gr) in dx
                .data_mut()
                .chunks_mut(cols)
                .zip(p.data().chunks(cols))
                .zip(g.data().chunks(cols))
            {
                let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((dv, pv), gv) in d.iter_mut().zip(pr).zip(gr) {
                    *dv = pv * (gv - dot);
                }
            }
            vec![Some(dx)]
        })
    }

    /// Mean over rows: `[rows, cols] -> [cols]`.
    pub fn col_mean(self) -> Var<'g> {
        let x = self.value();
        let (rows, cols) = x.rows_cols();
        let mut out = vec![0.0; cols];
        for r in x.data().chunks(cols) {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= rows as f64;
        }
        let shape = x.shape().to_vec();
        self.graph
            .record(Tensor::new(&[cols], out), &[self], move |g, _| {
                let mut dx = Tensor::zeros(&shape);
                for r in dx.data_mut().chunks_mut(cols) {
                    for (d, gv) in r.iter_mut().zip(g.data()) {
                        *d = gv / rows as f64;
                    }
                }
                vec![Some(dx)]
            })
    }

    /// Adds a `[cols]` vector to every row.
    pub fn add_row(self, v: Var<'g>) -> Var<'g> {
        let (x, vv) = (self.value(), v.value());
        let (_, cols) = x.rows_cols();
        assert_eq!(vv.len(), cols, "add_row: vector length");
        let mut out = (*x).clone();
        for r in out.data_mut().chunks_mut(cols) {
            for (o, b) in r.iter_mut().zip(vv.data()) {
                *o += b;
            }
        }
        let vshape = vv.shape().to_vec();
        self.graph.record(out, &[self, v], move |g, need| {
            let dv = need[1].then(|| {
                let mut acc = vec![0.0; cols];
                for r in g.data().chunks(cols) {
                    for (a, gv) in acc.iter_mut().zip(r) {
                        *a += gv;
                    }
                }
                Tensor::new(&vshape, acc)
            });
            vec![need[0].then(|| g.clone()), dv]
        })
    }

    pub fn sub_row(self, v: Var<'g>) -> Var<'g> {
        self.add_row(v.neg())
    }

    /// Divides row `r` by `v[r]`.
    pub fn div_col(self, v: Var<'g>) -> Var<'g> {
        let (x, vv) = (self.value(), v.value());
        let (rows, cols) = x.rows_cols();
        assert_eq!(vv.len(), rows, "div_col: vector length");
        let mut out = (*x).clone();
        for (r, d) in out.data_mut().chunks_mut(cols).zip(vv.data()) {
            for o in r.iter_mut() {
                *o /= d;
            }
        }
        let q = std::rc::Rc::new(out.clone());
        let vshape = vv.shape().to_vec();
        self.graph.record(out, &[self, v], move |g, need| {
            let dx = need[0].then(|| {
                let mut dx = g.clone();
                for (r, d) in dx.data_mut().chunks_mut(cols).zip(vv.data()) {
                    for o in r.iter_mut() {
                        *o /= d;
                    }
                }
                dx
            });
            let dv = need[1].then(|| {
                let acc: Vec<f64> = g
                    .data()
                    .chunks(cols)
                    .zip(q.data().chunks(cols))
                    .zip(vv.data())
                    .map(|((gr, qr), d)| {
                        -gr.iter().zip(qr).map(|(a, b)| a * b).sum::<f64>() / d
                    })
                    .collect();
                Tensor::new(&vshape, acc)
            });
            vec![dx, dv]
        })
    }

    /// Element `[r, idx[r]]` of every row.
    pub fn pick_rows(self, idx: &[usize]) -> Var<'g> {
        let x = self.value();
        let (rows, cols) = x.rows_cols();
        assert_eq!(idx.len(), rows, "pick_rows: one index per row");
        assert!(idx.iter().all(|&i| i < cols), "pick_rows: index out of range");
        let out: Vec<f64> = idx
            .iter()
            .enumerate()
            .map(|(r, &c)| x.data()[r * cols + c])
            .collect();
        let idx = idx.to_vec();
        let shape = x.shape().to_vec();
        self.graph
            .record(Tensor::new(&[rows], out), &[self], move |g, _| {
                let mut dx = Tensor::zeros(&shape);
                for (r, (&c, gv)) in idx.iter().zip(g.data()).enumerate() {
                    dx.data_mut()[r * cols + c] = *gv;
                }
                vec![Some(dx)]
            })
    }

    /// Element `i` of a flat var as a `[1]` var.
    pub fn index(self, i: usize) -> Var<'g> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.graph
            .record(Tensor::scalar(x.data()[i]), &[self], move |g, _| {
                let mut dx = Tensor::zeros(&shape);
                dx.data_mut()[i] = g.item();
                vec![Some(dx)]
            })
    }

    /// Mean absolute difference `mean(|a - b|)` as a `[1]` var.
    pub fn l1_mean_distance(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "l1_mean_distance: shape mismatch");
        let n = a.len() as f64;
        let d = a.zip_map(&b, |x, y| x - y);
        let out = d.data().iter().map(|v| v.abs()).sum::<f64>() / n;
        self.graph
            .record(Tensor::scalar(out), &[self, other], move |g, need| {
                let s = g.item() / n;
                let da = d.map(|v| sign(v) * s);
                vec![need[0].then(|| da.clone()), need[1].then(|| da.scale(-1.0))]
            })
    }
}

/// Packs single-element vars into a `[k]` vector.
pub fn stack<'g>(items: &[Var<'g>]) -> Var<'g> {
    assert!(!items.is_empty(), "stack of nothing");
    let graph = items[0].graph;
    let vals: Vec<f64> = items.iter().map(|v| v.item()).collect();
    let k = vals.len();
    graph.record(Tensor::new(&[k], vals), items, move |g, _| {
        g.data().iter().map(|&v| Some(Tensor::scalar(v))).collect()
    })
}

/// `sum_k w[k] * items[k]` for equally shaped items and a `[k]` weight vector.
pub fn weighted_sum<'g>(items: &[Var<'g>], weights: Var<'g>) -> Var<'g> {
    assert!(!items.is_empty(), "weighted_sum of nothing");
    let graph = items[0].graph;
    let w = weights.value();
    assert_eq!(w.len(), items.len(), "weighted_sum: one weight per item");
    let vals: Vec<_> = items.iter().map(|v| v.value()).collect();
    let mut out = Tensor::zeros(vals[0].shape());
    for (v, &wk) in vals.iter().zip(w.data()) {
        assert_eq!(v.shape(), out.shape(), "weighted_sum: shape mismatch");
        for (o, x) in out.data_mut().iter_mut().zip(v.data()) {
            *o += wk * x;
        }
    }
    let mut parents = items.to_vec();
    parents.push(weights);
    let k = items.len();
    graph.record(out, &parents, move |g, need| {
        let mut res: Vec<Option<Tensor>> = (0..k)
            .map(|i| need[i].then(|| g.scale(w.data()[i])))
            .collect();
        let dw = need[k].then(|| {
            let d: Vec<f64> = vals
                .iter()
                .map(|v| v.data().iter().zip(g.data()).map(|(a, b)| a * b).sum())
                .collect();
            Tensor::new(w.shape(), d)
        });
        res.push(dw);
        res
    })
}
