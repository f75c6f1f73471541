//! Differentiable operations. Most are methods on [`Var`](crate::Var); the
//! variadic ones are free functions here.

mod conv;
mod elementwise;
mod norm;
mod reduce;
mod shape;
mod spatial;

pub use conv::ConvGeometry;
pub use norm::BatchStats;
pub use reduce::{stack, weighted_sum};
pub use shape::concat0;
