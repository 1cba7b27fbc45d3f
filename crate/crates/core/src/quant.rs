//! Uniform asymmetric quantization and per-layer KV-cache bit-widths.
//!
//! A block of values `a` at bit-width `b` is stored as
//! `code = round((a - min) / step)` with `step = (max - min) / (2^b - 1)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::KvCacheConfig;

pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 16;
/// Bit-width that bypasses quantization in the KV cache.
pub const PASSTHROUGH_BITS: u8 = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedBlock {
    pub codes: Vec<u32>,
    pub bits: u8,
    pub vmin: f32,
    pub step: f32,
}

impl QuantizedBlock {
    pub fn max_code(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

pub fn quantize(a: &[f32], bits: u8) -> Result<QuantizedBlock> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(Error::invalid(format!(
            "bit-width {bits} outside {MIN_BITS}..={MAX_BITS}"
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid("cannot quantize an empty block"));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cannot quantize non-finite values"));
    }
    let vmin = a.iter().copied().fold(f32::INFINITY, f32::min);
    let vmax = a.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let max_code = (1u32 << bits) - 1;
    if vmax == vmin {
        return Ok(QuantizedBlock {
            codes: vec![0; a.len()],
            bits,
            vmin,
            step: 1.0,
        });
    }
    let step = ((vmax as f64 - vmin as f64) / max_code as f64) as f32;
    let step64 = step as f64;
    let codes = a
        .iter()
        .map(|&v| {
            // f64::round is half-away-from-zero.
            let c = ((v as f64 - vmin as f64) / step64).round();
            c.clamp(0.0, max_code as f64) as u32
        })
        .collect();
    Ok(QuantizedBlock {
        codes,
        bits,
        vmin,
        step,
    })
}

pub fn dequantize(q: &QuantizedBlock) -> Vec<f32> {
    let vmin = q.vmin as f64;
    let step = q.step as f64;
    q.codes.iter().map(|&c| (vmin + c as f64 * step) as f32).collect()
}

/// Per-layer KV-cache bit-widths, `{"bits": [b_0, ...]}` on disk.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BandwidthProfile {
    pub bits: Vec<u8>,
}

impl BandwidthProfile {
    pub fn uniform(n_layers: usize, bits: u8) -> Self {
        Self {
            bits: vec![bits; n_layers],
        }
    }

    pub fn count(&self, bits: u8) -> usize {
        self.bits.iter().filter(|&&b| b == bits).count()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn make_kv_config(profile: &BandwidthProfile, n_layers: usize) -> Result<KvCacheConfig> {
    if profile.bits.len() != n_layers {
        return Err(Error::invalid(format!(
            "bandwidth profile has {} layers, model has {n_layers}",
            profile.bits.len()
        )));
    }
    KvCacheConfig::new(profile.bits.clone())
}
