//! Simulation of locally private, communication-constrained mean estimation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod codebook;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod mechanisms;
pub mod rand_geom;
pub mod selftest;
pub mod stats;

pub use error::{Error, Result};
