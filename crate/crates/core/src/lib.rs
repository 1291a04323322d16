//! Design, sizing, analysis and simulation of micro-randomized trials.
//!
//! A micro-randomized trial re-randomizes every participant at each of `T`
//! decision times. This crate sizes such trials for a target power against a
//! smooth (by default quadratic-in-day) proximal treatment effect, runs the
//! centered least-squares test with a small-sample corrected sandwich
//! variance, and checks the sizing by Monte Carlo under a family of
//! generative models.
//!
//! Module map:
//!
//! - [`distributions`]: log-gamma, incomplete beta, central and noncentral F.
//! - [`design`]: decision grids, feature paths, availability and effect paths.
//! - [`samplesize`]: noncentrality, power and the minimal sample size.
//! - [`dataset`]: per-subject records and the CSV interchange format.
//! - [`estimator`]: working-model fit, sandwich variance, hypothesis test.
//! - [`simulate`]: generative scenarios and the Monte Carlo harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod design;
pub mod distributions;
pub mod error;
pub mod estimator;
mod linalg;
pub mod samplesize;
pub mod simulate;

pub use error::{Error, Result};
