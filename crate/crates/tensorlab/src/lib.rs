//! A small reverse-mode automatic differentiation library.
//!
//! Values live on a [`Tape`]: every primitive appends a node holding its
//! forward value together with the record needed to push gradients back to
//! its parents. Trainable tensors are owned by a [`ParamStore`] and enter a
//! tape through [`Tape::param`], so the same parameter layout can be run in
//! 32-bit training mode or 64-bit checking mode.

mod error;
mod gemm;
mod real;

pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod optim;
pub mod params;
pub mod tape;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use init::{kaiming_uniform, sinusoid};
pub use optim::{noam_lr, AdamConfig, NoamAdam, OptimizerState};
pub use params::{ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
