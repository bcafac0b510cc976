//! Weak supervision with learned labeling-function weights.
//!
//! Labeling functions are induced from a small labeled set, aggregated by a
//! weighted label model and trained jointly with a feature classifier. The
//! per-LF weights are learned on a validation split by one-step-unrolled
//! bi-level optimization.

pub mod aggregator;
pub mod bilevel;
pub mod config;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod lf;
pub mod model;
pub mod objective;
pub mod synthetic;

pub use error::{Error, Result};
