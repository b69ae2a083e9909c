//! Machine-unlearning laboratory on small differentiable models.
//!
//! The crate is organised bottom-up:
//!
//! - [`numcore`]: parameter vectors, seeded counter-based random streams,
//!   Kaiming sampling.
//! - [`models`]: quadratic oracle, softmax regression and small MLPs with
//!   exact gradients and Hessian-vector products.
//! - [`spectral`]: matrix-free extreme-eigenvalue estimation.
//! - [`training`]: optimizers, the training loop and the retrain / forget
//!   oracles.
//! - [`unlearning`]: influence-eliminating unlearning (retain descent,
//!   forget ascent, iterative re-initialisation) and baselines.
//! - [`metrics`]: relearning convergence delay, its bounds, membership
//!   inference and evaluation reports.
//! - [`data`]: synthetic datasets, forgetting splits, `.uds` files.
//! - [`checkpoint`]: the `IEUC` binary checkpoint format.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod numcore;
pub mod spectral;
pub mod training;
pub mod unlearning;

pub use error::{ForgeError, Result};
pub use numcore::{derive_stream, kaiming_sample, ParamVector, RngStream};
