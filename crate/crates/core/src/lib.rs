// `!(x > 0.0)` is used on purpose: unlike `x <= 0.0` it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod cli;
pub mod diagnostics;
pub mod feature_store;
pub mod flow;
pub mod metrics;
pub mod mvg;
pub mod rng;
pub mod scoring;
pub mod synth;
pub mod training;
