//! Mixed fractional Ornstein–Uhlenbeck process with drift input: kernel
//! transform, maximum likelihood estimation, optimal input design and
//! Laplace transforms of the quadratic functionals involved.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod design;
pub mod error;
pub mod estimator;
pub mod kernel;
pub mod laplace;
pub mod mc;
pub mod mfbm;
pub mod numerics;
pub mod process;

pub use error::{Error, Result};
pub use kernel::KernelBundle;
pub use mfbm::{HurstParam, NoisePath, NoiseSampler};
pub use numerics::TimeGrid;
pub use process::{InputKind, InputSignal, PathBundle, QForm};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
