//! File formats, the Monte Carlo harness and the `ldpwave` command-line
//! tool built on [`ldpwave_core`].
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod harness;
pub mod io;
pub mod spec;

pub use error::{Error, Result};
pub use harness::{NoiseMode, Scenario};
pub use ldpwave_core;
pub use spec::ExperimentSpec;
