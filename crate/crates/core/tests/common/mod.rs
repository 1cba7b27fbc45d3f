//! Shipped fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use optspa::model::{calibrate, tokenize_bytes, CalibrationStats, Checkpoint};

/// Window length used for every fixture evaluation.
pub const CTX: usize = 32;
/// Leading corpus tokens reserved for calibration.
pub const CALIB_TOKENS: usize = 512;
/// Tokens after the calibration prefix that form the evaluation split.
pub const EVAL_TOKENS: usize = 1024;

/// Dense `toy8` perplexity on the evaluation split, all-16 KV, `CTX` windows.
pub const TOY8_BASELINE_PPL: f64 = 1559.7347;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn corpus_text() -> String {
    std::fs::read_to_string(fixture("corpus.txt")).expect("fixture corpus")
}

pub fn corpus() -> Vec<u32> {
    tokenize_bytes(&corpus_text())
}

pub fn eval_tokens() -> Vec<u32> {
    corpus()[CALIB_TOKENS..CALIB_TOKENS + EVAL_TOKENS].to_vec()
}

/// The evaluation split as text, for feeding the command-line tool.
pub fn eval_text() -> String {
    corpus_text()[CALIB_TOKENS..CALIB_TOKENS + EVAL_TOKENS].to_string()
}

pub fn calib_text() -> String {
    corpus_text()[..CALIB_TOKENS].to_string()
}

/// 8 layers, d_model 32, 4 heads, d_ff 64, max_seq 64.
pub fn toy8() -> Checkpoint {
    Checkpoint::load(fixture("toy8.opsc")).expect("toy8 fixture")
}

/// 3 layers, d_model 16, 2 heads, d_ff 32, max_seq 32.
pub fn toy3() -> Checkpoint {
    Checkpoint::load(fixture("toy3.opsc")).expect("toy3 fixture")
}

pub fn calib_for(model: &Checkpoint) -> CalibrationStats {
    calibrate(model, &corpus(), CALIB_TOKENS).expect("calibration")
}
