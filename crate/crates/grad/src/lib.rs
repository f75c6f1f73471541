//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s together with
//! a backward closure. Calling [`Graph::backward`] on a scalar walks the tape
//! in reverse and accumulates gradients for every leaf created with
//! [`Graph::leaf`].
//!
//! The op set is deliberately narrow: what a small convolutional
//! encoder/decoder, batch normalization, softmax-style row reductions and
//! image-quality losses need. All ops panic on shape mismatch; callers
//! validate user-facing input before it reaches the tape.
//!
//! ```
//! use hazemeta_grad::{Graph, Tensor};
//!
//! let g = Graph::new();
//! let x = g.leaf(Tensor::new(&[3], vec![1.0, -2.0, 3.0]));
//! let y = x.square().sum();
//! let grads = g.backward(y);
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 6.0]);
//! ```

mod gemm;
mod graph;
mod tensor;

pub mod check;
pub mod ops;
pub mod optim;

pub use graph::{total_backward_nodes_recorded, Gradients, Graph, Var};
pub use tensor::Tensor;
