use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Byte-level vocabulary size.
pub const VOCAB: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub max_seq: usize,
}

impl ModelConfig {
    pub fn new(n_layers: usize, d_model: usize, n_heads: usize, d_ff: usize, max_seq: usize) -> Self {
        Self {
            n_layers,
            d_model,
            n_heads,
            d_ff,
            vocab: VOCAB,
            max_seq,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab", self.vocab),
            ("max_seq", self.max_seq),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model config: {name} must be >= 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::invalid(format!(
                "model config: n_heads ({}) must divide d_model ({})",
                self.n_heads, self.d_model
            )));
        }
        if self.vocab != VOCAB {
            return Err(Error::invalid(format!(
                "model config: vocab must be {VOCAB} (byte-level), got {}",
                self.vocab
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// `(rows, cols)` of a prunable matrix, stored as `out x in`.
    pub fn matrix_shape(&self, kind: MatrixKind) -> (usize, usize) {
        match kind {
            MatrixKind::Wq | MatrixKind::Wk | MatrixKind::Wv | MatrixKind::Wo => (self.d_model, self.d_model),
            MatrixKind::Wup => (self.d_ff, self.d_model),
            MatrixKind::Wdown => (self.d_model, self.d_ff),
        }
    }

    /// Number of prunable weights in one decoder layer.
    pub fn layer_numel(&self) -> usize {
        MatrixKind::ALL
            .iter()
            .map(|&k| {
                let (r, c) = self.matrix_shape(k);
                r * c
            })
            .sum()
    }

    /// Metadata lines in container order.
    pub fn to_metadata(&self) -> Vec<(String, String)> {
        vec![
            ("n_layers".into(), self.n_layers.to_string()),
            ("d_model".into(), self.d_model.to_string()),
            ("n_heads".into(), self.n_heads.to_string()),
            ("d_ff".into(), self.d_ff.to_string()),
            ("vocab".into(), self.vocab.to_string()),
            ("max_seq".into(), self.max_seq.to_string()),
        ]
    }

    pub fn from_metadata(meta: &[(String, String)]) -> Result<Self> {
        let get = |key: &str| -> Result<usize> {
            let (_, v) = meta
                .iter()
                .find(|(k, _)| k == key)
                .ok_or_else(|| Error::invalid(format!("metadata is missing `{key}`")))?;
            v.parse()
                .map_err(|_| Error::invalid(format!("metadata `{key}` is not a count: {v:?}")))
        };
        let cfg = Self {
            n_layers: get("n_layers")?,
            d_model: get("d_model")?,
            n_heads: get("n_heads")?,
            d_ff: get("d_ff")?,
            vocab: get("vocab")?,
            max_seq: get("max_seq")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The six prunable matrices of a decoder layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MatrixKind {
    Wq,
    Wk,
    Wv,
    Wo,
    Wup,
    Wdown,
}

impl MatrixKind {
    pub const ALL: [MatrixKind; 6] = [
        MatrixKind::Wq,
        MatrixKind::Wk,
        MatrixKind::Wv,
        MatrixKind::Wo,
        MatrixKind::Wup,
        MatrixKind::Wdown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MatrixKind::Wq => "Wq",
            MatrixKind::Wk => "Wk",
            MatrixKind::Wv => "Wv",
            MatrixKind::Wo => "Wo",
            MatrixKind::Wup => "Wup",
            MatrixKind::Wdown => "Wdown",
        }
    }

    /// Tensor name of this matrix in layer `layer`, e.g. `L3.Wup`.
    pub fn tensor_name(self, layer: usize) -> String {
        format!("L{layer}.{}", self.as_str())
    }
}

impl fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MatrixKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MatrixKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown matrix kind `{s}`")))
    }
}

/// Splits `L{l}.{kind}` into its parts.
pub fn parse_matrix_name(name: &str) -> Option<(usize, MatrixKind)> {
    let rest = name.strip_prefix('L')?;
    let (layer, kind) = rest.split_once('.')?;
    Some((layer.parse().ok()?, kind.parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ModelConfig::new(2, 16, 4, 32, 8).validate().is_ok());
        assert!(ModelConfig::new(2, 16, 3, 32, 8).validate().is_err());
        assert!(ModelConfig::new(0, 16, 4, 32, 8).validate().is_err());
        let mut c = ModelConfig::new(2, 16, 4, 32, 8);
        c.vocab = 512;
        assert!(c.validate().is_err());
    }

    #[test]
    fn metadata_round_trip() {
        let c = ModelConfig::new(3, 16, 2, 48, 32);
        assert_eq!(ModelConfig::from_metadata(&c.to_metadata()).unwrap(), c);
    }

    #[test]
    fn matrix_names() {
        assert_eq!(MatrixKind::Wdown.tensor_name(12), "L12.Wdown");
        assert_eq!(parse_matrix_name("L12.Wdown"), Some((12, MatrixKind::Wdown)));
        assert_eq!(parse_matrix_name("embed"), None);
        assert_eq!(parse_matrix_name("L1.attn_norm"), None);
    }
}
