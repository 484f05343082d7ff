//! Variational inference with reusable model gradients.
//!
//! A factorized reparameterized Gaussian approximation is fitted to a
//! differentiable model by stochastic gradient ascent on the evidence lower
//! bound. Gradients of the model are the expensive part of every step, so the
//! optimizers in this crate keep the samples `z_m`, their base draws `ε_m` and
//! the model gradients `∇_z log p(x, z_m)` and, after the approximation moves,
//! turn them into an importance-sampled gradient at the new parameters instead
//! of evaluating the model again.
//!
//! Modules:
//! - [`approximation`]: the variational family, its transform and inverse.
//! - [`models`]: target models with mini-batch-scaled log-joints and gradients.
//! - [`estimators`]: fresh and importance-sampled gradient estimators.
//! - [`optimizers`]: Adam, SGD, I-SGD, SAG, I-SAG and SRA drivers.
//! - [`harness`]: run configuration, experiments and CSV/JSON output.

pub mod approximation;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod models;
pub mod optimizers;
pub mod rng;
pub mod trace;

pub use error::{Error, Result};
