//! Collapsing a task's preliminary parameters into one task parameter.
//!
//! The average rule weights every sample equally. The distance-aware rule
//! weights sample `k` by `softmax(-d)_k`, where `d_k` is the mean L1
//! distance from sample `k` to the other samples of the task, so samples far
//! from the rest contribute less.

use hazemeta_grad::ops::{stack, weighted_sum};
use hazemeta_grad::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Average,
    DistanceAware,
}

/// How the L1 norm between two preliminary parameters is reduced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormReduction {
    /// Mean absolute difference; independent of tensor size.
    #[default]
    Mean,
    /// Sum of absolute differences.
    Sum,
}

/// The aggregated task parameter, `[1, C, H', W']`.
#[derive(Clone, Debug)]
pub struct TaskParam<'g> {
    pub features: Var<'g>,
    /// Weight of each preliminary parameter; non-negative, sums to 1.
    pub source_weights: Vec<f64>,
    pub domain_id: Option<usize>,
}

/// Mean distance from each preliminary parameter to the others, shape `[K]`.
#[derive(Clone, Debug)]
pub struct DistanceProfile<'g> {
    pub d: Var<'g>,
}

impl DistanceProfile<'_> {
    pub fn values(&self) -> Vec<f64> {
        self.d.value().data().to_vec()
    }
}

fn check_shapes(prelims: &[Var<'_>]) -> Result<()> {
    let first = prelims
        .first()
        .ok_or_else(|| Error::InvalidInput("no preliminary parameters to aggregate".into()))?;
    let shape = first.shape();
    if let Some(p) = prelims.iter().find(|p| p.shape() != shape) {
        return Err(Error::Shape(format!(
            "preliminary parameters differ in shape: {shape:?} vs {:?}",
            p.shape()
        )));
    }
    Ok(())
}

pub fn average_aggregate<'g>(prelims: &[Var<'g>]) -> Result<TaskParam<'g>> {
    check_shapes(prelims)?;
    let k = prelims.len();
    let g = prelims[0].graph();
    let weights = vec![1.0 / k as f64; k];
    let features = if k == 1 {
        prelims[0]
    } else {
        weighted_sum(prelims, g.constant(Tensor::new(&[k], weights.clone())))
    };
    Ok(TaskParam {
        features,
        source_weights: weights,
        domain_id: None,
    })
}

pub fn pairwise_mean_distance<'g>(prelims: &[Var<'g>], reduction: NormReduction) -> Result<DistanceProfile<'g>> {
    check_shapes(prelims)?;
    let k = prelims.len();
    if k < 2 {
        return Err(Error::InvalidInput(
            "pairwise distances need at least two preliminary parameters".into(),
        ));
    }
    let scale = match reduction {
        NormReduction::Mean => 1.0,
        NormReduction::Sum => prelims[0].value().len() as f64,
    };
    let mut pair = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let dist = prelims[i].l1_mean_distance(prelims[j]);
            pair[i][j] = Some(dist);
            pair[j][i] = Some(dist);
        }
    }
    let rows: Vec<Var<'g>> = (0..k)
        .map(|i| {
            let others: Vec<Var<'g>> = (0..k).filter(|&j| j != i).map(|j| pair[i][j].unwrap()).collect();
            stack(&others).sum().mul_scalar(scale / (k - 1) as f64)
        })
        .collect();
    Ok(DistanceProfile { d: stack(&rows) })
}

/// `sum_k softmax(-d)_k * phi_k`; a single parameter passes through.
pub fn distance_aware_aggregate<'g>(prelims: &[Var<'g>], reduction: NormReduction) -> Result<TaskParam<'g>> {
    check_shapes(prelims)?;
    let k = prelims.len();
    if k == 1 {
        return Ok(TaskParam {
            features: prelims[0],
            source_weights: vec![1.0],
            domain_id: None,
        });
    }
    let profile = pairwise_mean_distance(prelims, reduction)?;
    let w = profile.d.neg().reshape(&[1, k]).softmax_rows().reshape(&[k]);
    let source_weights = w.value().data().to_vec();
    Ok(TaskParam {
        features: weighted_sum(prelims, w),
        source_weights,
        domain_id: None,
    })
}

pub fn aggregate<'g>(kind: Aggregator, prelims: &[Var<'g>], reduction: NormReduction) -> Result<TaskParam<'g>> {
    match kind {
        Aggregator::Average => average_aggregate(prelims),
        Aggregator::DistanceAware => distance_aware_aggregate(prelims, reduction),
    }
}
