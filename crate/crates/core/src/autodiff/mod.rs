//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! replays it in reverse. Parameters live outside the tape in a [`ParamSet`]
//! and enter each pass as trainable leaves.

mod checkpoint;
pub mod gradcheck;
mod tape;
mod tensor;

pub use checkpoint::{ParamSet, MAGIC as CHECKPOINT_MAGIC};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
