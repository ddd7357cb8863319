//! Branching random walks in the boundary case.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod brw;
pub mod lab;
pub mod law;
pub mod walk;
pub mod rng;
pub mod spine;
pub mod stats;

pub use error::{Error, Result};
pub use law::{normalize_to_boundary, validate_boundary, BoundaryCertificate, CountLaw, Family, Law, OffspringLawSpec};
pub use stats::{Estimate, Summary};
