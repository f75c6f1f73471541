//! Named parameter storage and layer helpers on top of the autodiff graph.
//!
//! Networks are plain functions over a [`Ctx`], which binds entries of a
//! [`ParamSet`] into the graph the first time they are used. After the
//! backward pass, [`Ctx::gradients`] maps gradients back to parameter names.

use std::cell::RefCell;
use std::collections::BTreeMap;

use hazemeta_grad::ops::{BatchStats, ConvGeometry};
use hazemeta_grad::{Gradients, Graph, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers.
    Train,
    /// Running statistics in normalization layers.
    Eval,
}

/// Trainable tensors plus non-trainable buffers, both keyed by dotted names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_param(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, t: Tensor) {
        self.buffers.insert(name.into(), t);
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Number of trainable scalars, optionally restricted to a name prefix.
    pub fn num_scalars(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.len())
            .sum()
    }

    /// Adds every entry of `other`, replacing same-named entries.
    pub fn extend(&mut self, other: ParamSet) {
        self.params.extend(other.params);
        self.buffers.extend(other.buffers);
    }

    /// First parameter or buffer with a non-finite entry.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.params
            .iter()
            .chain(&self.buffers)
            .find(|(_, t)| !t.is_finite())
            .map(|(k, _)| k.as_str())
    }

    /// `name.weight` `[cout, cin, k, k]` with He-uniform init, plus zero `name.bias`.
    pub fn add_conv<R: Rng>(&mut self, name: &str, cin: usize, cout: usize, k: usize, bias: bool, rng: &mut R) {
        let bound = (6.0 / (cin * k * k) as f64).sqrt();
        self.insert_param(
            format!("{name}.weight"),
            Tensor::from_fn(&[cout, cin, k, k], |_| rng.gen_range(-bound..bound)),
        );
        if bias {
            self.insert_param(format!("{name}.bias"), Tensor::zeros(&[cout]));
        }
    }

    /// `name.weight` `[out, in]` and `name.bias` `[out]`.
    pub fn add_linear<R: Rng>(&mut self, name: &str, input: usize, output: usize, rng: &mut R) {
        let bound = (6.0 / input as f64).sqrt();
        self.insert_param(
            format!("{name}.weight"),
            Tensor::from_fn(&[output, input], |_| rng.gen_range(-bound..bound)),
        );
        self.insert_param(format!("{name}.bias"), Tensor::zeros(&[output]));
    }

    pub fn add_batch_norm(&mut self, name: &str, channels: usize) {
        self.insert_param(format!("{name}.gamma"), Tensor::ones(&[channels]));
        self.insert_param(format!("{name}.beta"), Tensor::zeros(&[channels]));
        self.insert_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels]));
        self.insert_buffer(format!("{name}.running_var"), Tensor::ones(&[channels]));
    }

    /// Folds batch statistics into the running buffers with [`BN_MOMENTUM`].
    pub fn apply_bn_stats(&mut self, stats: &[(String, BatchStats)]) {
        for (name, s) in stats {
            for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var_unbiased)] {
                let key = format!("{name}.{suffix}");
                let buf = self
                    .buffers
                    .get_mut(&key)
                    .unwrap_or_else(|| panic!("missing buffer {key}"));
                for (r, b) in buf.data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                }
            }
        }
    }

    /// Scales all parameters whose name starts with `prefix`.
    pub fn scale_prefix(&mut self, prefix: &str, factor: f64) {
        for (k, t) in self.params.iter_mut() {
            if k.starts_with(prefix) {
                *t = t.scale(factor);
            }
        }
    }

    /// Checks that `other` holds exactly the same names and shapes.
    pub fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        for (kind, a, b) in [
            ("parameter", &self.params, &other.params),
            ("buffer", &self.buffers, &other.buffers),
        ] {
            for (k, t) in a {
                match b.get(k) {
                    None => return Err(Error::Shape(format!("{kind} {k} is missing"))),
                    Some(u) if u.shape() != t.shape() => {
                        return Err(Error::Shape(format!(
                            "{kind} {k}: expected {:?}, found {:?}",
                            t.shape(),
                            u.shape()
                        )))
                    }
                    _ => {}
                }
            }
            if let Some(k) = b.keys().find(|k| !a.contains_key(*k)) {
                return Err(Error::Shape(format!("unexpected {kind} {k}")));
            }
        }
        Ok(())
    }
}

/// Binds a [`ParamSet`] into one graph for one forward pass.
pub struct Ctx<'g, 'p> {
    graph: &'g Graph,
    params: &'p ParamSet,
    mode: Mode,
    trainable: bool,
    bound: RefCell<BTreeMap<String, Var<'g>>>,
    bn_stats: RefCell<Vec<(String, BatchStats)>>,
}

impl<'g, 'p> Ctx<'g, 'p> {
    /// Parameters become gradient-tracking leaves when the graph records.
    pub fn new(graph: &'g Graph, params: &'p ParamSet, mode: Mode) -> Self {
        Self {
            graph,
            params,
            mode,
            trainable: graph.grad_enabled(),
            bound: RefCell::new(BTreeMap::new()),
            bn_stats: RefCell::new(Vec::new()),
        }
    }

    /// Parameters enter as constants.
    pub fn frozen(graph: &'g Graph, params: &'p ParamSet, mode: Mode) -> Self {
        Self {
            trainable: false,
            ..Self::new(graph, params, mode)
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn has(&self, name: &str) -> bool {
        self.params.param(name).is_some()
    }

    /// Graph variable for parameter `name`; panics if it does not exist.
    pub fn param(&self, name: &str) -> Var<'g> {
        if let Some(v) = self.bound.borrow().get(name) {
            return *v;
        }
        let t = self
            .params
            .param(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .clone();
        let v = if self.trainable {
            self.graph.leaf(t)
        } else {
            self.graph.constant(t)
        };
        self.bound.borrow_mut().insert(name.to_string(), v);
        v
    }

    fn buffer(&self, name: &str) -> &'p Tensor {
        self.params
            .buffer(name)
            .unwrap_or_else(|| panic!("unknown buffer {name}"))
    }

    /// Convolution with `name.weight` and, if present, `name.bias`.
    pub fn conv(&self, x: Var<'g>, name: &str, stride: usize) -> Var<'g> {
        let w = self.param(&format!("{name}.weight"));
        let k = w.shape()[2];
        let bias_name = format!("{name}.bias");
        let bias = self.has(&bias_name).then(|| self.param(&bias_name));
        x.conv2d(w, bias, ConvGeometry::new(k, stride, k / 2))
    }

    /// `x [n, in] -> [n, out]`.
    pub fn linear(&self, x: Var<'g>, name: &str) -> Var<'g> {
        let w = self.param(&format!("{name}.weight"));
        let b = self.param(&format!("{name}.bias"));
        x.matmul_nt(w).add_row(b)
    }

    pub fn batch_norm(&self, x: Var<'g>, name: &str) -> Var<'g> {
        let gamma = self.param(&format!("{name}.gamma"));
        let beta = self.param(&format!("{name}.beta"));
        match self.mode {
            Mode::Train => {
                let (y, stats) = x.batch_norm_train(gamma, beta, BN_EPS);
                self.bn_stats.borrow_mut().push((name.to_string(), stats));
                y
            }
            Mode::Eval => {
                let mean = self.buffer(&format!("{name}.running_mean"));
                let var = self.buffer(&format!("{name}.running_var"));
                x.batch_norm_eval(gamma, beta, mean.data(), var.data(), BN_EPS)
            }
        }
    }

    /// Batch statistics recorded by train-mode normalization layers.
    pub fn take_bn_stats(&self) -> Vec<(String, BatchStats)> {
        std::mem::take(&mut self.bn_stats.borrow_mut())
    }

    /// Names of all parameters touched so far.
    pub fn bound_names(&self) -> Vec<String> {
        self.bound.borrow().keys().cloned().collect()
    }

    /// Gradients of every bound parameter that received one.
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.bound
            .borrow()
            .iter()
            .filter_map(|(k, v)| grads.get(*v).map(|g| (k.clone(), g.clone())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradients_map_back_to_names() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        ps.add_linear("fc", 3, 2, &mut rng);
        let g = Graph::new();
        let ctx = Ctx::new(&g, &ps, Mode::Train);
        let x = g.constant(Tensor::ones(&[4, 3]));
        let y = ctx.linear(x, "fc").sum();
        let grads = ctx.gradients(&g.backward(y));
        assert_eq!(grads["fc.bias"].data(), &[4.0, 4.0]);
        assert_eq!(grads["fc.weight"].data(), &[4.0; 6]);
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let mut ps = ParamSet::new();
        ps.add_batch_norm("bn", 1);
        let stats = BatchStats {
            mean: vec![2.0],
            var_unbiased: vec![3.0],
        };
        ps.apply_bn_stats(&[("bn".into(), stats)]);
        assert!((ps.buffer("bn.running_mean").unwrap().item() - 0.2).abs() < 1e-12);
        assert!((ps.buffer("bn.running_var").unwrap().item() - 1.2).abs() < 1e-12);
    }

    #[test]
    fn compatibility_detects_shape_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = ParamSet::new();
        a.add_conv("c", 3, 4, 3, true, &mut rng);
        let mut b = a.clone();
        assert!(a.check_compatible(&b).is_ok());
        b.insert_param("c.bias", Tensor::zeros(&[5]));
        assert!(a.check_compatible(&b).is_err());
    }
}
