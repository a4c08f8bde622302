//! Dense `f64` tensors with a tape-based reverse-mode differentiation engine.
//!
//! ```
//! use rsd_autograd::{Graph, Tensor};
//!
//! let g = Graph::new();
//! let x = g.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]));
//! let y = x.mul(&x).unwrap().sum();
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod conv;
mod error;
pub mod gradcheck;
mod graph;
pub mod nn;
mod param;
pub mod record;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use nn::Mode;
pub use param::Param;
pub use tensor::{standard_normal, Tensor};
