//! Comparative deep generative models at desk scale.
//!
//! This crate implements contrastive and multi-group variational
//! auto-encoders for paired background/target data sets, together with
//! the machinery needed to fit and evaluate them from scratch:
//!
//! * [`tensor`] / [`graph`] — dense f64 tensors with reverse-mode
//!   automatic differentiation (define-by-run tape),
//! * [`rng`] / [`special`] / [`linalg`] — seeded sampling, special
//!   functions, and small symmetric eigenproblems,
//! * [`nn`] — multilayer perceptrons with batch norm and dropout,
//! * [`dist`] — likelihoods, KL terms and reparameterized sampling,
//! * [`simgen`] — synthetic contrastive / multi-group data sets,
//! * [`models`] — the generative models and their ELBO objectives,
//! * [`optim`] — Adam, multi-objective (Pareto) descent, HSIC/CKA
//!   estimation, penalty and primal–dual constrained training,
//! * [`metrics`] — disentanglement and clustering evaluation,
//! * [`checks`] — numerical verifiers for the counterexample
//!   constructions and the linear-misspecification proposition,
//! * [`io`] — data set, checkpoint and results persistence.

pub mod checks;
pub mod dist;
pub mod graph;
pub mod hsic;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod simgen;
pub mod special;
pub mod tensor;

mod error;

pub use error::{Error, Result};
pub use tensor::Tensor;
