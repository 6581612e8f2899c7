//! Counterfactual rating prediction for open-domain dialogue.
//!
//! This crate estimates per-dialogue quality ratings from sequences of
//! turn-level feature vectors, with an emphasis on *causal* robustness: the
//! flagship model is a two-headed LSTM regressor whose shared representation
//! is regularized toward balance across treatment arms with a Wasserstein
//! distance penalty, so that per-arm predictions remain meaningful under
//! intervention (e.g. "what would the rating have been had the conversation
//! gone wrong / not gone wrong?").
//!
//! Module map:
//! - [`data`]: dialogue/turn types, JSONL IO, normalization, aggregation
//! - [`treatment`]: ODES-category-to-arm policies and assignment
//! - [`nn`]: minimal reverse-mode autodiff, LSTM/MLP primitives, Adam
//! - [`ipm`]: exact 1-D Wasserstein-1 and its sliced extension, with gradients
//! - [`models`]: baselines, the counterfactual LSTM, training, checkpoints
//! - [`augment`]: masking-based data augmentation
//! - [`eval`]: metrics (Pearson at three granularities, accuracy, ATE)
//! - [`synth`]: synthetic data generator with known ground-truth effects

pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod ipm;
pub mod models;
pub mod nn;
pub mod synth;
pub mod treatment;

pub use error::{Error, Result};
