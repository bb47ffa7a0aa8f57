//! Continual learning of a class-conditional Wasserstein generator with
//! replay regularized in feature space.
//!
//! Tasks arrive one class at a time. While learning task `t`, a frozen
//! snapshot of the generator from task `t - 1` regenerates earlier classes,
//! and the live generator is held to it by an l2 or adversarial distance
//! between encoded features, between raw samples, or a blend of both
//! (`alpha`). Forgetting is scored from a triangular ledger of per-task
//! Frechet distances.
//!
//! [`continual`] holds the training engine, [`experiment`] the config,
//! runner and artifact writers, and [`autodiff`] the small reverse-mode
//! engine everything is differentiated with.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod continual;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nets;
pub mod objectives;
pub mod rng;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
