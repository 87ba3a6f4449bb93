//! Deep fusion of neural networks and numerical checks of the training
//! dynamics around the growth step.
//!
//! * [`diff`]: reverse-mode gradients, finite-difference oracles, Hessian-vector
//!   products and Lie brackets.
//! * [`net`]: layers, networks, losses and synthetic tasks.
//! * [`fusion`]: block-diagonal fusion of layers and whole networks, with the
//!   bookkeeping of which fused coordinates came from which source.
//! * [`bea`]: the two-step update around the growth step, its modified loss
//!   and modified flow, and the gradient identities at the fusion point.
//! * [`harness`]: training, learning-rate schedules and the sweep drivers.

pub mod bea;
pub mod diff;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod net;
pub mod params;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use params::{Gradient, ParamStore, Role};
pub use tensor::Tensor;
