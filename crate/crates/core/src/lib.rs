//! Group-disentangled variational autoencoders trained on paired
//! observations, with the metrics and fairness pipeline used to evaluate them.
//!
//! Observations come from a factor grid ([`data`]); pairs share every factor
//! of one group. [`objectives`] defines GroupVAE and the MLVAE, GVAE and
//! β-VAE baselines, [`training`] fits them with Adam, and [`metrics`] scores
//! the learned representation with MIG and group-MIG.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod data;
pub mod distributions;
pub mod error;
pub mod fairness;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
