//! Central finite-difference gradient checking.
//!
//! Each checked coordinate is compared against the central difference at
//! step `h`. The central difference at `h/2` is computed too: for a smooth
//! function both agree to `O(h^2)`, so a disagreement larger than the
//! tolerance means a non-differentiable point (a ReLU hinge, an `abs` or an
//! argmax switch) lies inside the probe interval. Such coordinates are
//! counted as kinks and excluded from the error statistic. A kink very close
//! to the probe point shifts both central differences alike, so the second
//! differences are compared as well: for a smooth function the one at `h` is
//! twice the one at `h/2`, at a kink both equal the jump in slope.

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so that gradients that
    /// are zero analytically are judged on absolute error.
    pub abs_floor: f64,
    /// Check at most this many coordinates per input, evenly spaced.
    pub max_coords_per_input: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-7,
            max_coords_per_input: None,
        }
    }
}

/// Worst coordinate seen during a check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub kinks: usize,
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance && self.checked > 0
    }

    /// Fraction of probed coordinates that straddled a kink.
    pub fn kink_fraction(&self) -> f64 {
        let total = self.checked + self.kinks;
        if total == 0 {
            0.0
        } else {
            self.kinks as f64 / total as f64
        }
    }
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> f64
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>,
{
    let g = Graph::no_grad();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    f(&g, &vars).item()
}

fn coords(len: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(c) if c < len => {
            let stride = len as f64 / c as f64;
            (0..c).map(|i| (i as f64 * stride) as usize).collect()
        }
        _ => (0..len).collect(),
    }
}

/// Analytic gradients of `f` at `inputs`, one tensor per input.
pub fn analytic_gradients<F>(f: &F, inputs: &[Tensor]) -> Vec<Tensor>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>,
{
    let g = Graph::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&g, &vars);
    let grads = g.backward(out);
    vars.iter()
        .zip(inputs)
        .map(|(v, t)| {
            grads
                .get(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect()
}

/// Compares reverse-mode gradients of the scalar function `f` against
/// central differences, coordinate by coordinate.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], cfg: GradCheckConfig) -> GradCheckReport
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>,
{
    let analytic = analytic_gradients(&f, inputs);
    let mut report = GradCheckReport {
        checked: 0,
        kinks: 0,
        max_rel_error: 0.0,
        worst: None,
        tolerance: cfg.tolerance,
    };
    let mut probe = inputs.to_vec();
    let h = cfg.step;
    for (input, grad) in analytic.iter().enumerate() {
        for coord in coords(grad.len(), cfg.max_coords_per_input) {
            let orig = probe[input].data()[coord];
            let mut at = |delta: f64| {
                probe[input].data_mut()[coord] = orig + delta;
                let v = eval(&f, &probe);
                probe[input].data_mut()[coord] = orig;
                v
            };
            let (p1, m1, p2, m2, f0) = (at(h), at(-h), at(h / 2.0), at(-h / 2.0), at(0.0));
            let central = (p1 - m1) / (2.0 * h);
            let central_half = (p2 - m2) / h;
            let curv = (p1 - 2.0 * f0 + m1) / h;
            let curv_half = 2.0 * (p2 - 2.0 * f0 + m2) / h;
            let a = grad.data()[coord];
            let scale = a.abs().max(central.abs()).max(cfg.abs_floor);
            if (central - central_half).abs() / scale > cfg.tolerance
                || (curv - 2.0 * curv_half).abs() / scale > cfg.tolerance
            {
                report.kinks += 1;
                continue;
            }
            let rel = (a - central).abs() / scale;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some(Mismatch {
                    input,
                    coord,
                    analytic: a,
                    numeric: central,
                    rel_error: rel,
                });
            }
        }
    }
    report
}
