//! Tweedie-loss ranking laboratory: distribution engine, training losses,
//! a small neural ranker, a synthetic viewing world, experiment protocol,
//! KS fitting and Taylor-basis loss decomposition.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decompose;
pub mod error;
pub mod fit;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod ranker;
pub mod rng;
pub mod special;
pub mod stats;
pub mod tweedie;
pub mod world;

pub use error::{Error, Result};

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
