//! Dense 64-bit tensors with tape-free reverse-mode automatic differentiation.
//!
//! Every operation returns a new [`Tensor`]. When at least one input requires a
//! gradient (and gradient recording is enabled, see [`no_grad`]) the result
//! remembers its parents together with a closure that maps the output gradient
//! to input gradients. [`Tensor::backward`] walks that graph once in reverse
//! topological order.
//!
//! The crate also carries the pieces a small training loop needs: parameterised
//! layers ([`nn`]), [`optim::AdamW`] with a [`optim::CosineSchedule`], a finite
//! difference checker ([`gradcheck`]) and the flat `MOED` checkpoint format
//! ([`checkpoint`]).

mod error;
mod kernels;
mod tensor;

pub mod checkpoint;
pub mod gradcheck;
pub mod nn;
pub mod ops;
pub mod optim;

pub use error::{Result, TensorError};
pub use tensor::{is_grad_enabled, no_grad, Tensor};
