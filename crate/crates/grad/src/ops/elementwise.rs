use std::rc::Rc;

use crate::graph::Var;
use crate::tensor::Tensor;

fn same_shape(a: &Tensor, b: &Tensor, op: &str) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

impl<'g> Var<'g> {
    pub fn add(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "add");
        let out = a.zip_map(&b, |x, y| x + y);
        self.graph.record(out, &[self, other], |g, _| {
            vec![Some(g.clone()), Some(g.clone())]
        })
    }

    pub fn sub(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "sub");
        let out = a.zip_map(&b, |x, y| x - y);
        self.graph.record(out, &[self, other], |g, _| {
            vec![Some(g.clone()), Some(g.scale(-1.0))]
        })
    }

    pub fn mul(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "mul");
        let out = a.zip_map(&b, |x, y| x * y);
        self.graph.record(out, &[self, other], move |g, need| {
            vec![
                need[0].then(|| g.zip_map(&b, |gv, y| gv * y)),
                need[1].then(|| g.zip_map(&a, |gv, x| gv * x)),
            ]
        })
    }

    pub fn div(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "div");
        let out = a.zip_map(&b, |x, y| x / y);
        let q = Rc::new(out.clone());
        self.graph.record(out, &[self, other], move |g, need| {
            vec![
                need[0].then(|| g.zip_map(&b, |gv, y| gv / y)),
                need[1].then(|| {
                    let gq = g.zip_map(&q, |gv, qv| gv * qv);
                    gq.zip_map(&b, |v, y| -v / y)
                }),
            ]
        })
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        let out = self.value().map(|x| x + c);
        self.graph
            .record(out, &[self], |g, _| vec![Some(g.clone())])
    }

    pub fn mul_scalar(self, c: f64) -> Var<'g> {
        let out = self.value().map(|x| x * c);
        self.graph
            .record(out, &[self], move |g, _| vec![Some(g.scale(c))])
    }

    pub fn neg(self) -> Var<'g> {
        self.mul_scalar(-1.0)
    }

    /// Multiplies every element by a single-element var.
    pub fn scale_by(self, s: Var<'g>) -> Var<'g> {
        let (x, sv) = (self.value(), s.value());
        assert_eq!(sv.len(), 1, "scale_by needs a single-element scale");
        let k = sv.item();
        let out = x.map(|v| v * k);
        self.graph.record(out, &[self, s], move |g, need| {
            vec![
                need[0].then(|| g.scale(k)),
                need[1].then(|| {
                    let dot: f64 = g.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
                    Tensor::new(sv.shape(), vec![dot])
                }),
            ]
        })
    }

    pub fn relu(self) -> Var<'g> {
        let x = self.value();
        let out = x.map(|v| v.max(0.0));
        self.graph.record(out, &[self], move |g, _| {
            vec![Some(g.zip_map(&x, |gv, v| if v > 0.0 { gv } else { 0.0 }))]
        })
    }

    pub fn sigmoid(self) -> Var<'g> {
        let out = self.value().map(|v| 1.0 / (1.0 + (-v).exp()));
        let s = Rc::new(out.clone());
        self.graph.record(out, &[self], move |g, _| {
            vec![Some(g.zip_map(&s, |gv, sv| gv * sv * (1.0 - sv)))]
        })
    }

    pub fn exp(self) -> Var<'g> {
        let out = self.value().map(f64::exp);
        let e = Rc::new(out.clone());
        self.graph.record(out, &[self], move |g, _| {
            vec![Some(g.zip_map(&e, |gv, ev| gv * ev))]
        })
    }

    /// Natural log of `max(x, floor)`. Clamped entries get zero gradient.
    pub fn ln_clamped(self, floor: f64) -> Var<'g> {
        let x = self.value();
        let out = x.map(|v| v.max(floor).ln());
        self.graph.record(out, &[self], move |g, _| {
            vec![Some(g.zip_map(&x, |gv, v| if v > floor { gv / v } else { 0.0 }))]
        })
    }

    pub fn ln(self) -> Var<'g> {
        self.ln_clamped(f64::MIN_POSITIVE)
    }

    pub fn abs(self) -> Var<'g> {
        let x = self.value();
        let out = x.map(f64::abs);
        self.graph.record(out, &[self], move |g, _| {
            vec![Some(g.zip_map(&x, |gv, v| gv * sign(v)))]
        })
    }

    pub fn sqrt(self) -> Var<'g> {
        let out = self.value().map(f64::sqrt);
        let r = Rc::new(out.clone());
        self.graph.record(out, &[self], move |g, _| {
            vec![Some(g.zip_map(&r, |gv, rv| gv * 0.5 / rv))]
        })
    }

    pub fn square(self) -> Var<'g> {
        let x = self.value();
        let out = x.map(|v| v * v);
        self.graph.record(out, &[self], move |g, _| {
            vec![Some(g.zip_map(&x, |gv, v| 2.0 * gv * v))]
        })
    }
}

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
