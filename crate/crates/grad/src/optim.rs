use std::collections::BTreeMap;

use crate::tensor::Tensor;

/// Adam with bias correction. Moments are keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every `(name, param, grad)` triple.
    pub fn update<'a>(&mut self, items: impl IntoIterator<Item = (&'a str, &'a mut Tensor, &'a Tensor)>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, param, grad) in items {
            assert_eq!(param.shape(), grad.shape(), "adam: grad shape for {name}");
            let m = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            let v = self
                .second
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            for (((p, g), mv), vv) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * g;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * g * g;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    /// `(name, first moment, second moment)` for serialization.
    pub fn moments(&self) -> impl Iterator<Item = (&str, &Tensor, &Tensor)> {
        self.first
            .iter()
            .map(move |(k, m)| (k.as_str(), m, &self.second[k]))
    }

    /// Rebuilds optimizer state saved through [`Adam::moments`].
    pub fn restore(
        lr: f64,
        beta1: f64,
        beta2: f64,
        step: u64,
        moments: impl IntoIterator<Item = (String, Tensor, Tensor)>,
    ) -> Self {
        let mut adam = Self::new(lr, beta1, beta2);
        adam.step = step;
        for (k, m, v) in moments {
            adam.first.insert(k.clone(), m);
            adam.second.insert(k, v);
        }
        adam
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(0.1, 0.9, 0.999);
        let mut p = Tensor::new(&[2], vec![1.0, -1.0]);
        let g = Tensor::new(&[2], vec![3.0, -0.5]);
        adam.update([("p", &mut p, &g)]);
        // Bias-corrected first step is lr * sign(g).
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert!((p.data()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::new(0.05, 0.9, 0.999);
        let mut p = Tensor::new(&[1], vec![4.0]);
        for _ in 0..500 {
            let g = p.map(|v| 2.0 * (v - 1.5));
            adam.update([("p", &mut p, &g)]);
        }
        assert!((p.item() - 1.5).abs() < 1e-2);
    }
}
