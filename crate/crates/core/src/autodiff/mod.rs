//! Tape-style reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is built fresh for every forward pass. Leaves are either
//! constants or tracked [`Param`]s; every op appends one node holding its
//! value and whatever it needs for the backward sweep. [`Graph::backward`]
//! walks the tape once in reverse and returns [`Gradients`], from which the
//! optimiser reads per-parameter gradients.
//!
//! Broadcasting is limited to the leading batch dimension (`add_bias`).

mod graph;
pub(crate) mod kernels;
mod tensor;

pub use graph::{Gradients, Graph, Param, ParamId, Var};
pub use tensor::Tensor;
