//! Domain-relevant contrastive regularization.
//!
//! Task parameters are compared with a contextual loss: every channel map is
//! one feature vector, and each feature of the first parameter looks for its
//! most similar feature in the second. A domain classifier scores each task
//! parameter; of the two same-domain tasks in a batch, the more confidently
//! classified one guides the other, while tasks of other domains act as
//! negatives.

use hazemeta_grad::Var;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Ctx, ParamSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CxConfig {
    /// Softmax bandwidth.
    pub h: f64,
    /// Guards normalization and the relative-distance division.
    pub eps: f64,
    /// Average the per-feature maxima instead of summing them. Summing lets
    /// the loss go negative.
    pub normalize: bool,
}

impl Default for CxConfig {
    fn default() -> Self {
        Self {
            h: 0.5,
            eps: 1e-5,
            normalize: true,
        }
    }
}

fn as_features<'g>(phi: Var<'g>) -> Result<Var<'g>> {
    let s = phi.shape();
    let (c, rest) = match s.as_slice() {
        [1, c, h, w] => (*c, h * w),
        [c, h, w] => (*c, h * w),
        _ => return Err(Error::Shape(format!("expected [1, C, H, W] or [C, H, W], got {s:?}"))),
    };
    Ok(phi.reshape(&[c, rest]))
}

/// `U x V` contextual similarity, rows normalized over `v`.
pub fn contextual_similarity<'g>(a: Var<'g>, b: Var<'g>, cfg: &CxConfig) -> Result<Var<'g>> {
    let (x, y) = (as_features(a)?, as_features(b)?);
    if x.shape() != y.shape() {
        return Err(Error::Shape(format!(
            "contextual similarity between {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mu = y.col_mean();
    let unit = |f: Var<'g>| {
        let c = f.sub_row(mu);
        c.div_col(c.square().row_sum().add_scalar(cfg.eps).sqrt())
    };
    let cos = unit(x).matmul_nt(unit(y));
    let d = cos.neg().add_scalar(1.0);
    let rel = d.div_col(d.row_min().add_scalar(cfg.eps));
    Ok(rel.neg().add_scalar(1.0).mul_scalar(1.0 / cfg.h).softmax_rows())
}

/// `-ln(mean_u max_v A_uv)`, or with the sum when `normalize` is off.
pub fn contextual_loss<'g>(a: Var<'g>, b: Var<'g>, cfg: &CxConfig) -> Result<Var<'g>> {
    let sim = contextual_similarity(a, b, cfg)?;
    let best = sim.row_max();
    let pooled = if cfg.normalize { best.mean() } else { best.sum() };
    Ok(pooled.ln_clamped(1e-300).neg())
}

/// Convolutional domain classifier over task parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { hidden: 32 }
    }
}

pub fn init_classifier<R: Rng>(ps: &mut ParamSet, cfg: &ClassifierConfig, phi_channels: usize, domains: usize, rng: &mut R) {
    ps.add_conv("classifier.conv1", phi_channels, cfg.hidden, 3, true, rng);
    ps.add_conv("classifier.conv2", cfg.hidden, cfg.hidden, 3, true, rng);
    ps.add_linear("classifier.fc", cfg.hidden, domains, rng);
}

/// Domain probabilities `[n, I]` for task parameters `[n, C, H', W']`.
pub fn classify_domains<'g>(ctx: &Ctx<'g, '_>, phis: Var<'g>) -> Var<'g> {
    let h = ctx.conv(phis, "classifier.conv1", 2).relu();
    let h = ctx.conv(h, "classifier.conv2", 2).relu();
    ctx.linear(h.global_avg_pool(), "classifier.fc").softmax_rows()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainPrediction {
    pub probs: Vec<f64>,
    /// Probability of the true domain, when known.
    pub confidence: Option<f64>,
}

impl DomainPrediction {
    /// One prediction per row of a `[n, I]` probability var.
    pub fn from_probs(probs: Var<'_>, labels: Option<&[usize]>) -> Vec<DomainPrediction> {
        let t = probs.value();
        let (_, cols) = t.rows_cols();
        t.data()
            .chunks(cols)
            .enumerate()
            .map(|(i, row)| DomainPrediction {
                probs: row.to_vec(),
                confidence: labels.map(|l| row[l[i]]),
            })
            .collect()
    }

    pub fn predicted(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContrastSelection {
    pub anchor: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// Picks anchor, positive and negatives for a batch of task parameters.
///
/// The pair is the first task whose domain reappears later in the batch,
/// together with that later task. The more confident of the two is the
/// positive; on a tie the lower index is. Negatives are every task of a
/// different domain.
pub fn select_positive(domains: &[usize], confidences: &[f64]) -> Result<ContrastSelection> {
    if domains.len() != confidences.len() {
        return Err(Error::Shape(format!(
            "{} domain labels but {} confidences",
            domains.len(),
            confidences.len()
        )));
    }
    let (first, second) = (0..domains.len())
        .find_map(|i| {
            (i + 1..domains.len())
                .find(|&j| domains[j] == domains[i])
                .map(|j| (i, j))
        })
        .ok_or_else(|| Error::Sampling(format!("no same-domain pair in batch domains {domains:?}")))?;
    let (positive, anchor) = if confidences[second] > confidences[first] {
        (second, first)
    } else {
        (first, second)
    };
    let negatives = (0..domains.len())
        .filter(|&i| domains[i] != domains[first])
        .collect();
    Ok(ContrastSelection {
        anchor,
        positive,
        negatives,
    })
}

/// `L(a, p) / (L(a, p) + sum_n L(a, n) + sigma)` with the positive detached.
pub fn dcr_loss<'g>(sel: &ContrastSelection, params: &[Var<'g>], cfg: &CxConfig, sigma: f64) -> Result<Var<'g>> {
    let get = |i: usize| {
        params
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("selection index {i} out of {} params", params.len())))
    };
    let anchor = get(sel.anchor)?;
    let pos = contextual_loss(anchor, get(sel.positive)?.detach(), cfg)?;
    let mut denom = pos.add_scalar(sigma);
    for &n in &sel.negatives {
        denom = denom.add(contextual_loss(anchor, get(n)?, cfg)?);
    }
    Ok(pos.div(denom))
}
