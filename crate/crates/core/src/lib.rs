//! Structured nonlinear ICA with switching linear dynamical sources.
//!
//! Each latent component follows its own switching linear dynamical system
//! driven by a hidden Markov chain; the components are mixed by a nonlinear
//! decoder and observed under additive Gaussian noise. The crate provides the
//! simulator, structured mean-field inference, stochastic-gradient learning,
//! evaluation metrics and identifiability diagnostics.

pub mod diagnostics;
pub mod evaluation;
pub mod expfam;
pub mod genmodel;
pub mod inference;
pub mod nets;
pub mod numerics;
pub mod par;
pub mod rng;
pub mod training;

mod error;

pub use error::{Result, SnicaError};
