//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! Plain kernels ([`matmul`], [`elementwise`], ...) compute values. A
//! [`Graph`] records the same kernels for one forward pass and sweeps them
//! backwards once. Graph values and plain kernel values are bitwise equal.

mod graph;
mod tensor;

pub use graph::{Graph, Var};
pub use tensor::{
    activation, add_bias, elementwise, matmul, mul_row, reduce, scale, transpose, Activation,
    BinaryKind, ReduceKind, Tensor,
};
