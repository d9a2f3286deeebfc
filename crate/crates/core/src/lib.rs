//! Truncated stochastic approximation with random moving bounds.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod convex;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod fields;
pub mod harness;
pub mod history;
pub mod json;
pub mod models;
pub mod specfun;

pub use error::{Result, SaError};
