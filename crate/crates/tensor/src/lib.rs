//! A compact reverse-mode autodiff engine for CPU dense prediction.
//!
//! The engine is built around three pieces:
//!
//! - [`Tensor`]: a plain contiguous row-major array,
//! - [`Graph`] / [`Var`]: a define-by-run record of differentiable ops,
//! - [`ParamStore`] / [`Bound`]: named trainable parameters and their
//!   binding into a graph for one pass.
//!
//! Everything is generic over [`Real`], so the same model code runs in
//! `f32` for training and in `f64` for finite-difference checks.
//!
//! ```
//! use tsonet_tensor::{Graph, Tensor};
//!
//! let g = Graph::<f64>::new();
//! let x = g.variable(Tensor::from_vec([3], vec![1.0, 2.0, 3.0]));
//! let loss = x.square().sum_all();
//! let grads = g.backward(loss);
//! assert_eq!(grads.wrt(x).data(), &[2.0, 4.0, 6.0]);
//! ```

pub mod check;
mod error;
mod graph;
pub mod ops;
pub mod optim;
mod params;
mod real;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{expand, Gradients, Graph, Var};
pub use ops::conv::ConvSpec;
pub use params::{randn, Bound, ParamId, ParamStore};
pub use real::Real;
pub use tensor::{broadcast_shape, broadcast_zip, numel, strides_of, sum_to_shape, Tensor};
