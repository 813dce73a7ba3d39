//! Self-supervised video feature prediction in a language-aligned space.
//!
//! A student video transformer sees a tube-masked clip; a predictor fills in
//! features at masked positions, matched (after projection into the text
//! space) against an EMA teacher's features. A contrastive term aligns
//! features pooled over the detected action area with the clip caption.

// `!(x >= lo)` rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action_area;
pub mod cli;
pub mod config;
pub mod ema;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod selftest;
pub mod synthgen;
pub mod tokenize;
pub mod train;
pub mod util;

pub use error::{FilsError, Result};
