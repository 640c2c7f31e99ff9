#![no_std]
#![forbid(unsafe_code)]

//! Data debiasing with datamodels.
//!
//! This crate estimates how individual training examples drive a classifier's
//! predictions on held-out examples (TRAK-style attribution), combines those
//! estimates into per-example group alignment scores that weight poorly served
//! groups more heavily, and removes the training examples that hurt the worst
//! groups before retraining. When no group labels are available, pseudo-groups
//! are derived from the top principal component of the per-class attribution
//! matrix.
//!
//! Everything here is pure computation over in-memory values and only needs
//! `alloc`. File formats, run directories and the command line live in the
//! companion `d3m` crate.
//!
//! Module map:
//!
//! - [`numerics`]: matrices, seeded RNG, random projections, Gram inversion,
//!   power-iteration PCA, soft-max weights.
//! - [`datasets`]: examples, datasets, the planted-bias synthetic generator.
//! - [`models`]: linear and one-hidden-layer tanh classifiers with exact
//!   per-example margin gradients.
//! - [`attribution`]: attribution estimation, leave-one-out oracle, LDS.
//! - [`debias`]: group coefficients, alignment scores, removal selection.
//! - [`discovery`]: pseudo-group labels and the label-free pipeline.
//! - [`eval`]: group metrics, removal sweeps and baselines.
//! - [`exec`]: the job-runner abstraction used for parallel trials and sweeps.

extern crate alloc;

pub mod attribution;
pub mod datasets;
pub mod debias;
pub mod discovery;
mod error;
pub mod eval;
pub mod exec;
pub mod models;
pub mod numerics;

pub use error::{Error, Result};
