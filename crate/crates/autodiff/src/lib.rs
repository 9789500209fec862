//! Dense reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its variables. Calling
//! [`Tape::backward`] on a scalar result walks the tape in reverse and
//! accumulates gradients for every leaf created with `requires_grad`.
//!
//! ```
//! use stproc_autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
//! ```
//!
//! The crate also carries the pieces every training loop built on the tape
//! needs: named parameter sets with EMA support, AdamW with global-norm
//! clipping and a warmup + cosine learning-rate schedule, and a versioned
//! little-endian checkpoint container.

mod backward;
pub mod checkpoint;
mod error;
pub mod gradcheck;
mod ops;
pub mod optim;
mod params;
mod real;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointEntry};
pub use error::{AutodiffError, Result};
pub use optim::{clip_grad_norm, lr_schedule, AdamW, AdamWConfig, StepOutcome};
pub use params::ParamSet;
pub use real::{DType, Real};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
