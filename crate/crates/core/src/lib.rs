//! Exact simulation of the `(J + 1)`-node star interference network under
//! logarithmic-weight capacity sharing, closed-form predictions of its
//! multi-time-scale behaviour, and a Monte-Carlo harness reconciling both.

// `!(x > 0.0)` is used deliberately so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod harness;
pub mod model;
pub mod oracles;
pub mod sim;
pub mod stats;
pub mod theory;

mod serde_inf;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
