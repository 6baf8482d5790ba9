//! Desk-scale video virtual try-on.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`numcore`]: tensors, a reverse-mode tape and a gradient checker
//! - [`geometry`]: backward warping by dense flow and thin-plate splines
//! - [`agnostic`]: clothing-agnostic person masks and occlusion handling
//! - [`warpfit`]: warp objectives and their gradient-descent fitters
//! - [`flowtrack`]: temporal smoothing of appearance-flow sequences
//! - [`mpdt`]: the dual-stream patch-attention generator
//! - [`objectives`]: training losses, Adam and evaluation metrics
//! - [`pipeline`]: file formats, synthetic scenes and orchestration

// `!(x > 0.0)` style checks are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agnostic;
pub mod error;
pub mod flowtrack;
pub mod geometry;
pub mod mpdt;
pub mod numcore;
pub mod objectives;
pub mod par;
pub mod pipeline;
pub mod warpfit;

pub use error::{Error, Result};
