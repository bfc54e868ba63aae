//! Gibbs-measure invariance toolkit for GOY and SABRA shell models.
//!
//! The crate implements the shell operators at finite truncation, exact
//! sampling and Wick calculus for the Gaussian Gibbs measure, stochastic and
//! deterministic integrators, and ensemble harnesses that test invariance of
//! the Gibbs measure under each flow.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod generators;
pub mod gibbs;
pub mod nonlinearity;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
