//! Gradient-aligned regression.
//!
//! Training objective that pairs a conventional pointwise loss with two
//! pairwise label-difference losses, both reduced to linear-time forms
//! (error variance and 1 - Pearson), aggregated through a distributionally
//! robust log-domain combiner. Includes a small fp64 autodiff engine, MLP
//! training, dataset utilities, evaluation metrics, a timing harness and an
//! experiment runner with cross-validation and grid search.

pub mod aggregate;
pub mod autodiff;
pub mod bench;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod optimize;
pub mod stats;
pub mod tensor;

pub use autodiff::{backward, Var};
pub use error::{GarError, Result};
pub use tensor::Tensor;
