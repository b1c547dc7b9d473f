//! Simulator and analytical-bound toolkit for CSMA scheduling over
//! percolation-based routes in large random wireless networks.

// Parameter checks are written `!(x > 0.0)` on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capacity;
pub mod csma;
pub mod error;
pub mod harness;
pub mod percolation;
pub mod phy;
pub mod routing;
pub mod seed;
pub mod spatial;

pub use error::{Error, Result};
