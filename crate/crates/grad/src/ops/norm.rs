use crate::graph::Var;
use crate::tensor::Tensor;

/// Per-channel statistics measured by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for running-statistics updates.
    pub var_unbiased: Vec<f64>,
}

fn channel_view(x: &Tensor) -> (usize, usize, usize) {
    let (n, c, h, w) = x.dims4();
    (n, c, h * w)
}

impl<'g> Var<'g> {
    /// Batch normalization over `(n, h, w)` with batch statistics.
    pub fn batch_norm_train(self, gamma: Var<'g>, beta: Var<'g>, eps: f64) -> (Var<'g>, BatchStats) {
        let x = self.value();
        let (n, c, plane) = channel_view(&x);
        let (gv, bv) = (gamma.value(), beta.value());
        assert!(gv.len() == c && bv.len() == c, "batch_norm: affine length");
        let m = (n * plane) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for (idx, p) in x.data().chunks(plane).enumerate() {
            mean[idx % c] += p.iter().sum::<f64>();
        }
        for v in mean.iter_mut() {
            *v /= m;
        }
        for (idx, p) in x.data().chunks(plane).enumerate() {
            let mu = mean[idx % c];
            var[idx % c] += p.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
        }
        for v in var.iter_mut() {
            *v /= m;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = (*x).clone();
        for (idx, p) in xhat.data_mut().chunks_mut(plane).enumerate() {
            let ch = idx % c;
            for v in p.iter_mut() {
                *v = (*v - mean[ch]) * inv_std[ch];
            }
        }
        let mut out = xhat.clone();
        for (idx, p) in out.data_mut().chunks_mut(plane).enumerate() {
            let ch = idx % c;
            for v in p.iter_mut() {
                *v = *v * gv.data()[ch] + bv.data()[ch];
            }
        }
        let stats = BatchStats {
            mean: mean.clone(),
            var_unbiased: var
                .iter()
                .map(|v| if m > 1.0 { v * m / (m - 1.0) } else { *v })
                .collect(),
        };
        let var_out = self.graph.record(out, &[self, gamma, beta], move |g, need| {
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for (idx, (gp, xp)) in g.data().chunks(plane).zip(xhat.data().chunks(plane)).enumerate() {
                let ch = idx % c;
                sum_g[ch] += gp.iter().sum::<f64>();
                sum_gx[ch] += gp.iter().zip(xp).map(|(a, b)| a * b).sum::<f64>();
            }
            let dx = need[0].then(|| {
                let mut dx = Tensor::zeros(xhat.shape());
                for (idx, ((dp, gp), xp)) in dx
                    .data_mut()
                    .chunks_mut(plane)
                    .zip(g.data().chunks(plane))
                    .zip(xhat.data().chunks(plane))
                    .enumerate()
                {
                    let ch = idx % c;
                    let k = gv.data()[ch] * inv_std[ch] / m;
                    for ((d, gvv), xv) in dp.iter_mut().zip(gp).zip(xp) {
                        *d = k * (m * gvv - sum_g[ch] - xv * sum_gx[ch]);
                    }
                }
                dx
            });
            vec![
                dx,
                need[1].then(|| Tensor::new(&[c], sum_gx.clone())),
                need[2].then(|| Tensor::new(&[c], sum_g.clone())),
            ]
        });
        (var_out, stats)
    }

    /// Batch normalization with fixed running statistics.
    pub fn batch_norm_eval(
        self,
        gamma: Var<'g>,
        beta: Var<'g>,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Var<'g> {
        let x = self.value();
        let (_, c, plane) = channel_view(&x);
        let (gv, bv) = (gamma.value(), beta.value());
        assert!(running_mean.len() == c && running_var.len() == c);
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mean = running_mean.to_vec();
        let mut xhat = (*x).clone();
        for (idx, p) in xhat.data_mut().chunks_mut(plane).enumerate() {
            let ch = idx % c;
            for v in p.iter_mut() {
                *v = (*v - mean[ch]) * inv_std[ch];
            }
        }
        let mut out = xhat.clone();
        for (idx, p) in out.data_mut().chunks_mut(plane).enumerate() {
            let ch = idx % c;
            for v in p.iter_mut() {
                *v = *v * gv.data()[ch] + bv.data()[ch];
            }
        }
        self.graph.record(out, &[self, gamma, beta], move |g, need| {
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for (idx, (gp, xp)) in g.data().chunks(plane).zip(xhat.data().chunks(plane)).enumerate() {
                sum_g[idx % c] += gp.iter().sum::<f64>();
                sum_gx[idx % c] += gp.iter().zip(xp).map(|(a, b)| a * b).sum::<f64>();
            }
            let dx = need[0].then(|| {
                let mut dx = g.clone();
                for (idx, p) in dx.data_mut().chunks_mut(plane).enumerate() {
                    let k = gv.data()[idx % c] * inv_std[idx % c];
                    for v in p.iter_mut() {
                        *v *= k;
                    }
                }
                dx
            });
            vec![
                dx,
                need[1].then(|| Tensor::new(&[c], sum_gx)),
                need[2].then(|| Tensor::new(&[c], sum_g)),
            ]
        })
    }
}
