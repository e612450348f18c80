//! Dense `f64` arrays with a recording tape for reverse-mode
//! differentiation, a named parameter store with a binary checkpoint format,
//! and a central-difference gradient oracle.
//!
//! ```
//! use numgraph::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.variable(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod error;
mod gradcheck;
mod graph;
mod ops;
mod params;
mod tensor;

pub use error::{GraphError, Result};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{Graph, Var};
pub use ops::LAYER_NORM_EPS;
pub use params::{ParamStore, CHECKPOINT_VERSION};
pub use tensor::Tensor;
