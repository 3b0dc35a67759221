//! Arterial traffic-flow forecasting with a diffusion convolutional
//! recurrent network whose detector graph is weighted by signal phase splits.

// `!(x > 0.0)` is how validation rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod signal_graph;
pub mod training;

pub use error::{Error, Result};
