//! Slot-based graph attention for heterogeneous graphs.
//!
//! Every node keeps one representation slot per node type. Slot `t` only
//! ever holds information that originated in type-`t` feature space: each
//! layer transforms slot `t` with a type-specific matrix and aggregates it
//! from the same slot of the neighbours, with one attention weight per edge
//! shared by all slots. A final integration step collapses the slots into a
//! single vector per node for the downstream task.
//!
//! Crate layout:
//!
//! - [`graph`]: typed graph storage, file loading, components and negative sampling.
//! - [`autodiff`]: dense tensors and the reverse-mode tape.
//! - [`model`]: slot initialisation, message-passing layers and slot integration.
//! - [`tasks`]: losses, link decoders and evaluation metrics.
//! - [`spectral`]: the random-walk Laplacian convergence oracle.
//! - [`harness`]: configuration, synthetic data, splits, training and export.

pub mod autodiff;
pub mod error;
pub mod graph;
pub mod harness;
pub mod model;
pub mod spectral;
pub mod tasks;

pub use error::{Error, Result};
