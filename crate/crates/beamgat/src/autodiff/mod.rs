//! Dense-tensor compute core with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is an immutable row-major array; [`Tape`] records the forward
//! pass and replays it in reverse to produce exact gradients. The op set is
//! exactly what the attention network needs: matrix products, elementwise
//! activations, dropout, per-segment softmax/aggregation over CSR edge
//! segments, column concatenation, and row gather/slice plumbing.
//!
//! One training step owns one tape; tensors themselves are cheap to clone
//! (shared storage) and safe to read across threads.

mod kernels;
mod tape;
mod tensor;

pub use tape::{GradientMap, NodeId, Tape};
pub use tensor::Tensor;
