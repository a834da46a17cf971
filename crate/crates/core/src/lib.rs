//! Auxiliary mixture sampling for Poisson latent Gaussian models.
//!
//! The crate implements the AMS and IAMS Gibbs samplers, their
//! Metropolis-Hastings corrected variants (MH-IAMS and the tail-robust
//! RIAMS), and an automatic selector that picks among them after a short
//! monitored training phase. Residual laws are Negative Log-Gamma
//! distributions approximated by Gaussian mixtures fitted at run time.

// NaN must fail the domain checks, so negated comparisons are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augmentation;
pub mod conditional;
pub mod diagnostics;
pub mod error;
pub mod mixture;
pub mod model;
pub mod nlg;
pub mod oracle;
pub mod sampler;
pub mod special;
pub mod stats;
pub mod toy;

pub use error::{Error, Result};
