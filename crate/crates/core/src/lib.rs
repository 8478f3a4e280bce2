//! Clinically guided contrastive pretraining for single-lead ECG encoders.
//!
//! Risk scores computed from (possibly incomplete) patient metadata weight
//! the negatives of a contrastive objective, and an alignment term ties
//! embedding similarity to risk similarity. The crate contains everything
//! needed to run that pipeline on synthetic data: risk scoring, pairwise
//! weighting, losses with analytic gradients, a small autodiff engine, a
//! grouped-convolution encoder, signal preprocessing and augmentation,
//! dataset containers, training loops and metrics.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod loss;
pub mod numeric;
pub mod risk;
pub mod signal;
pub mod train;
pub mod weighting;

pub use error::{Error, Result};
