use crate::error::{Error, Result};
use crate::quant::{self, QuantizedBlock, MAX_BITS, MIN_BITS, PASSTHROUGH_BITS};

/// Per-layer bit-width of cached keys and values. 16 stores raw values.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct KvCacheConfig {
    bits: Vec<u8>,
}

impl KvCacheConfig {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|b| !(MIN_BITS..=MAX_BITS).contains(*b)) {
            return Err(Error::invalid(format!("KV bit-width {b} outside {MIN_BITS}..={MAX_BITS}")));
        }
        Ok(Self { bits })
    }

    pub fn passthrough(n_layers: usize) -> Self {
        Self::uniform(n_layers, PASSTHROUGH_BITS)
    }

    pub fn uniform(n_layers: usize, bits: u8) -> Self {
        Self::new(vec![bits; n_layers]).expect("bit-width in range")
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn n_layers(&self) -> usize {
        self.bits.len()
    }
}

/// One cached K or V row.
#[derive(Clone, Debug)]
pub enum CachedRow {
    Raw(Vec<f32>),
    Quantized(QuantizedBlock),
}

impl CachedRow {
    pub fn store(values: Vec<f32>, bits: u8) -> Result<Self> {
        if bits >= PASSTHROUGH_BITS {
            Ok(CachedRow::Raw(values))
        } else {
            Ok(CachedRow::Quantized(quant::quantize(&values, bits)?))
        }
    }

    /// The value attention sees for this row.
    pub fn read(&self) -> Vec<f32> {
        match self {
            CachedRow::Raw(v) => v.clone(),
            CachedRow::Quantized(q) => quant::dequantize(q),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct LayerCache {
    pub keys: Vec<CachedRow>,
    pub values: Vec<CachedRow>,
}

/// Mutable key/value state of one evaluation. Not meant to be shared between
/// concurrent evaluations.
#[derive(Clone, Debug)]
pub struct KvCache {
    layers: Vec<LayerCache>,
}

impl KvCache {
    pub fn new(n_layers: usize) -> Self {
        Self {
            layers: vec![LayerCache::default(); n_layers],
        }
    }

    /// Number of cached positions.
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.keys.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, l: usize) -> &LayerCache {
        &self.layers[l]
    }

    pub(crate) fn layer_mut(&mut self, l: usize) -> &mut LayerCache {
        &mut self.layers[l]
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.keys.clear();
            l.values.clear();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passthrough_is_raw() {
        let v = vec![0.1, -3.0, 7.25];
        match CachedRow::store(v.clone(), 16).unwrap() {
            CachedRow::Raw(r) => assert_eq!(r, v),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quantized_row_within_half_step() {
        let v = vec![0.1f32, -3.0, 7.25, 2.0];
        let row = CachedRow::store(v.clone(), 8).unwrap();
        let bound = (7.25f32 - -3.0) / (2.0 * 255.0);
        for (a, b) in row.read().iter().zip(&v) {
            assert!((a - b).abs() <= bound * 1.0001);
        }
    }

    #[test]
    fn config_validation() {
        assert!(KvCacheConfig::new(vec![8, 6, 16]).is_ok());
        assert!(KvCacheConfig::new(vec![1]).is_err());
        assert!(KvCacheConfig::new(vec![32]).is_err());
    }
}
