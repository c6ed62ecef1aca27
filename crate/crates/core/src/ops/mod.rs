//! Differentiable operations, recorded on a [`Tape`](crate::autograd::Tape).

pub mod conv;
pub mod elementwise;
pub mod matmul;
pub mod norm;
pub mod pool;
pub mod shape;
pub mod softmax;

pub use conv::Padding2d;
pub use elementwise::{gelu, sigmoid};
pub use norm::{update_running, BatchStats, RunningStats, BN_EPS, BN_MOMENTUM};
pub use softmax::softmax_rows;
