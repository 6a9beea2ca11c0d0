//! Estimators and simulators for marked spatio-temporal point processes.
#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` also rejects NaN, which is the point
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod geometry;
pub mod index;
pub mod inference;
pub mod intensity;
pub mod math;
pub mod pattern;
pub mod second_order;
pub mod simulate;

pub use error::{Error, Result};
