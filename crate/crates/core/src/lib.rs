//! Layer-wise compression workbench for small causal transformers.
//!
//! Prunes decoder matrices with per-layer sparsity ratios, quantizes the KV
//! cache with per-layer bit-widths, and searches both allocations with a
//! Tree-structured Parzen Estimator using perplexity as the objective.

pub mod error;
pub mod model;
pub mod prune;
pub mod quant;
pub mod report;
pub mod search;
pub mod tensor;

pub use error::{Error, Result};
