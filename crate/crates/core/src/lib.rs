//! Disentangled frequency, spatial and temporal attention decoder for
//! multichannel time series, with the small tensor engine it runs on.

pub mod autograd;
pub mod data;
pub mod dca;
pub mod error;
pub mod export;
pub mod gradcheck;
pub mod ltsa;
pub mod model;
pub mod mva;
pub mod nn;
pub mod ops;
pub mod par;
pub mod real;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Tape, Var};
pub use error::{ConfigError, DataError, Error, Result, TensorError};
pub use real::Real;
pub use tensor::Tensor;
