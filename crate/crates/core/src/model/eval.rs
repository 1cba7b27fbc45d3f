use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use super::checkpoint::Checkpoint;
use super::config::{parse_matrix_name, MatrixKind, ModelConfig};
use super::container::Container;
use super::engine::{ActivationSink, Site, Transformer};
use super::kv::KvCacheConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

/// Non-overlapping windows of length `ctx`; a trailing window is kept only if
/// it has at least two tokens.
pub fn windows(corpus: &[u32], ctx: usize) -> impl Iterator<Item = &[u32]> {
    corpus.chunks(ctx).filter(|w| w.len() >= 2)
}

/// Negative log2-probability of `target`. Base 2 keeps a uniform
/// distribution over a power-of-two vocabulary exact.
fn nll_bits(logits: &[f32], target: usize) -> f64 {
    let max = logits.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&v| (v as f64 - max).exp()).sum();
    sum.log2() - (logits[target] as f64 - max) * std::f64::consts::LOG2_E
}

/// Next-token NLLs of one window, scored through the KV-cache path.
fn window_nlls(tf: &Transformer<'_>, window: &[u32], kv: &KvCacheConfig) -> Result<Vec<f64>> {
    let mut cache = tf.new_cache();
    let mut nlls = Vec::with_capacity(window.len() - 1);
    for (pos, &tok) in window.iter().enumerate() {
        let logits = tf.forward_step(&mut cache, tok, pos, kv)?;
        if let Some(&next) = window.get(pos + 1) {
            nlls.push(nll_bits(&logits, next as usize));
        }
    }
    Ok(nlls)
}

/// `2^(mean NLL in bits)`, i.e. `exp(mean NLL)`, over every predicted
/// position of `corpus`.
///
/// Windows are evaluated in parallel, each with its own cache, and the NLLs
/// are summed in corpus order so the result does not depend on scheduling.
pub fn perplexity(model: &Checkpoint, corpus: &[u32], kv: &KvCacheConfig, ctx: usize) -> Result<f64> {
    if corpus.len() < 2 {
        return Err(Error::invalid(format!(
            "perplexity needs at least 2 tokens, got {}",
            corpus.len()
        )));
    }
    if ctx < 2 || ctx > model.config.max_seq {
        return Err(Error::invalid(format!(
            "ctx {ctx} must be in 2..={}",
            model.config.max_seq
        )));
    }
    let tf = Transformer::new(model)?;
    let per_window = windows(corpus, ctx)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|w| window_nlls(&tf, w, kv))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0f64;
    let mut count = 0usize;
    for nll in per_window.iter().flatten() {
        total += nll;
        count += 1;
    }
    Ok((total / count as f64).exp2())
}

/// Per-input-feature activation norms of every prunable matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationStats {
    pub tokens: usize,
    pub norms: BTreeMap<String, Vec<f32>>,
}

impl CalibrationStats {
    pub fn get(&self, name: &str) -> Option<&[f32]> {
        self.norms.get(name).map(Vec::as_slice)
    }

    pub fn require(&self, name: &str) -> Result<&[f32]> {
        self.get(name)
            .ok_or_else(|| Error::invalid(format!("calibration stats have no entry for {name}")))
    }

    /// Container form: the model config plus a `calib_tokens` key, one `1 x n`
    /// tensor per matrix.
    pub fn to_container(&self, config: &ModelConfig) -> Container {
        let mut metadata = config.to_metadata();
        metadata.push(("calib_tokens".into(), self.tokens.to_string()));
        Container {
            metadata,
            tensors: self
                .norms
                .iter()
                .map(|(k, v)| (k.clone(), Tensor2D::row_vector(v.clone())))
                .collect(),
        }
    }

    pub fn from_container(c: Container) -> Result<(ModelConfig, Self)> {
        let config = ModelConfig::from_metadata(&c.metadata)?;
        let tokens = c
            .meta("calib_tokens")
            .ok_or_else(|| Error::invalid("calibration file has no calib_tokens entry"))?
            .parse()
            .map_err(|_| Error::invalid("calib_tokens is not a count"))?;
        let mut norms = BTreeMap::new();
        for (name, t) in c.tensors {
            let (layer, kind) = parse_matrix_name(&name)
                .ok_or_else(|| Error::invalid(format!("unexpected calibration tensor {name}")))?;
            let (_, input_dim) = config.matrix_shape(kind);
            if layer >= config.n_layers || t.rows() != 1 || t.cols() != input_dim {
                return Err(Error::invalid(format!(
                    "calibration tensor {name} has shape {:?}, expected (1, {input_dim})",
                    t.shape()
                )));
            }
            norms.insert(name, t.into_data());
        }
        Ok((config, Self { tokens, norms }))
    }

    pub fn save(&self, config: &ModelConfig, path: impl AsRef<Path>) -> Result<()> {
        self.to_container(config).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(ModelConfig, Self)> {
        Self::from_container(Container::load(path)?)
    }
}

struct SquareSums {
    sums: Vec<[Vec<f64>; 6]>,
}

impl ActivationSink for SquareSums {
    fn record(&mut self, layer: usize, site: Site, values: &[f32]) {
        if let Site::Input(kind) = site {
            let idx = MatrixKind::ALL.iter().position(|&k| k == kind).expect("known kind");
            for (s, &v) in self.sums[layer][idx].iter_mut().zip(values) {
                *s += (v as f64) * (v as f64);
            }
        }
    }
}

/// Runs the first `n_tokens` of `corpus` through the model (in `max_seq`
/// windows, unquantized cache) and records `sqrt(sum x_j^2)` over all
/// positions for every input feature of every prunable matrix.
pub fn calibrate(model: &Checkpoint, corpus: &[u32], n_tokens: usize) -> Result<CalibrationStats> {
    if n_tokens == 0 || corpus.len() < n_tokens {
        return Err(Error::invalid(format!(
            "calibration needs 1..={} tokens, asked for {n_tokens}",
            corpus.len()
        )));
    }
    let cfg = model.config;
    let tf = Transformer::new(model)?;
    let kv = KvCacheConfig::passthrough(cfg.n_layers);
    let mut sink = SquareSums {
        sums: (0..cfg.n_layers)
            .map(|_| MatrixKind::ALL.map(|k| vec![0f64; cfg.matrix_shape(k).1]))
            .collect(),
    };
    for window in corpus[..n_tokens].chunks(cfg.max_seq) {
        let mut cache = tf.new_cache();
        for (pos, &tok) in window.iter().enumerate() {
            tf.forward_step_with(&mut cache, tok, pos, &kv, &mut sink)?;
        }
    }
    let mut norms = BTreeMap::new();
    for (l, per_kind) in sink.sums.into_iter().enumerate() {
        for (kind, sums) in MatrixKind::ALL.into_iter().zip(per_kind) {
            norms.insert(
                kind.tensor_name(l),
                sums.into_iter().map(|s| s.sqrt() as f32).collect(),
            );
        }
    }
    Ok(CalibrationStats {
        tokens: n_tokens,
        norms,
    })
}
