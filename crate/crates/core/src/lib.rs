//! Few-shot biosignal classification for wearables with prototypical
//! networks.
//!
//! The crate covers the whole lifecycle: synthetic multi-domain data,
//! preprocessing, episodic training of a small encoder, nearest-prototype
//! inference, prototype updates from new shots, fixed-point inference,
//! evaluation statistics and an analytical model of update cost and
//! battery life.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod evalmetrics;
pub mod nncore;
pub mod preprocess;
pub mod protonet;
pub mod quant;
pub mod rng;
pub mod signalgen;
pub mod updatesim;

pub use error::{Error, Result};
