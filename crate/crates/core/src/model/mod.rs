//! Toy byte-level causal transformer: weights, checkpoint I/O, cached
//! decoding, perplexity and calibration capture.

mod checkpoint;
mod config;
pub mod container;
mod engine;
mod eval;
mod kv;
mod tokenizer;

pub use checkpoint::{
    attn_norm_name, depth_scale, generate_toy_model, mlp_norm_name, Checkpoint, EMBED, FINAL_NORM, HEAD, POS,
};
pub use config::{parse_matrix_name, MatrixKind, ModelConfig, VOCAB};
pub use engine::{forward_full, gelu, rms_norm, ActivationSink, NoopSink, Site, Transformer, RMS_EPS};
pub use eval::{calibrate, perplexity, windows, CalibrationStats};
pub use kv::{CachedRow, KvCache, KvCacheConfig, LayerCache};
pub use tokenizer::{detokenize, tokenize_bytes};
