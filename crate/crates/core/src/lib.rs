//! Box-aware single-object tracking on point clouds, built on a small
//! reverse-mode autodiff engine.

pub mod autodiff;
pub mod backbone;
pub mod baff;
pub mod boxcloud;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod nn;
pub mod point_ops;
pub mod rpn;
pub mod tracker;
pub mod training;

pub use error::{Error, Result};
