//! Local learning coefficients of quadratic networks trained on modular
//! addition.
//!
//! The crate trains `Ŷ = V (WᵀX)∘²` on one-hot encoded `(a, b) ↦ a + b mod p`,
//! estimates the local learning coefficient (LLC) along training with SGLD,
//! and checks the closed-form LLC values for these networks against
//! numerical rank oracles.
//!
//! Module map:
//! - [`dataset`]: task generation, encoding and seeded splits.
//! - [`model`]: forward pass, centred loss, analytic gradients.
//! - [`trainer`]: minibatch SGD with checkpoint hooks.
//! - [`posterior`]: SGLD sampling of the localized tempered posterior and
//!   the LLC estimator.
//! - [`theory`]: closed-form coefficients and the rank oracles that check them.
//! - [`experiments`]: LLC tracking runs, grokking severity, sweeps.
//! - [`config`], [`run`], [`plot`]: configuration files, run directories and
//!   SVG charts used by the CLI.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod model;
pub mod plot;
pub mod posterior;
pub mod rng;
pub mod run;
pub mod stats;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
