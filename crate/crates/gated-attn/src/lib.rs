//! Gated sparse attention for sequence classification.
//!
//! A BiLSTM encoder feeds an attention layer whose positions are switched on
//! and off by a small auxiliary network. During training the binary gates are
//! relaxed with Gumbel-Softmax so everything trains jointly by
//! backpropagation; at test time hard gates let the attention scorer skip
//! closed positions entirely. Soft and local attention are included as
//! baselines, along with FLOPs accounting, density instrumentation, and
//! attention-map export.

pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod metrics;
pub mod model;
pub mod train;
pub mod error;
pub mod layers;
pub mod stochastic;

pub use error::{GaError, Result};
