//! Pre-norm causal decoder.
//!
//! Per layer: RMS-norm, multi-head causal attention, residual, RMS-norm,
//! GELU MLP, residual. A final RMS-norm feeds the vocabulary head.

use super::checkpoint::{attn_norm_name, mlp_norm_name, Checkpoint, EMBED, FINAL_NORM, HEAD, POS};
use super::config::{MatrixKind, ModelConfig};
use super::kv::{CachedRow, KvCache, KvCacheConfig};
use crate::error::{Error, Result};
use crate::tensor::{self, dot, Tensor2D};

pub const RMS_EPS: f64 = 1e-6;

/// Where an activation was observed during a forward step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Site {
    /// The input vector of a prunable matrix.
    Input(MatrixKind),
    /// Raw key row, before it enters the cache.
    Key,
    /// Raw value row, before it enters the cache.
    Value,
}

pub trait ActivationSink {
    fn record(&mut self, layer: usize, site: Site, values: &[f32]);
}

pub struct NoopSink;

impl ActivationSink for NoopSink {
    fn record(&mut self, _: usize, _: Site, _: &[f32]) {}
}

/// `x / sqrt(mean(x^2) + eps) * gain`. The zero vector maps to zero.
pub fn rms_norm(x: &[f32], gain: &[f32]) -> Vec<f32> {
    let ms = x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + RMS_EPS).sqrt();
    x.iter().zip(gain).map(|(&v, &g)| (v as f64 * inv * g as f64) as f32).collect()
}

/// Tanh approximation of GELU.
pub fn gelu(x: f32) -> f32 {
    let x = x as f64;
    let c = (2.0 / std::f64::consts::PI).sqrt();
    (0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())) as f32
}

struct LayerRefs<'a> {
    attn_norm: &'a [f32],
    mlp_norm: &'a [f32],
    wq: &'a Tensor2D,
    wk: &'a Tensor2D,
    wv: &'a Tensor2D,
    wo: &'a Tensor2D,
    wup: &'a Tensor2D,
    wdown: &'a Tensor2D,
}

/// Borrowed, name-resolved view of a checkpoint for fast stepping.
pub struct Transformer<'a> {
    config: ModelConfig,
    embed: &'a Tensor2D,
    pos: &'a Tensor2D,
    head: &'a Tensor2D,
    final_norm: &'a [f32],
    layers: Vec<LayerRefs<'a>>,
}

impl<'a> Transformer<'a> {
    pub fn new(model: &'a Checkpoint) -> Result<Self> {
        let layers = (0..model.config.n_layers)
            .map(|l| {
                Ok(LayerRefs {
                    attn_norm: model.tensor(&attn_norm_name(l))?.data(),
                    mlp_norm: model.tensor(&mlp_norm_name(l))?.data(),
                    wq: model.matrix(l, MatrixKind::Wq)?,
                    wk: model.matrix(l, MatrixKind::Wk)?,
                    wv: model.matrix(l, MatrixKind::Wv)?,
                    wo: model.matrix(l, MatrixKind::Wo)?,
                    wup: model.matrix(l, MatrixKind::Wup)?,
                    wdown: model.matrix(l, MatrixKind::Wdown)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: model.config,
            embed: model.tensor(EMBED)?,
            pos: model.tensor(POS)?,
            head: model.tensor(HEAD)?,
            final_norm: model.tensor(FINAL_NORM)?.data(),
            layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache::new(self.config.n_layers)
    }

    pub fn forward_step(
        &self,
        cache: &mut KvCache,
        token: u32,
        position: usize,
        kv: &KvCacheConfig,
    ) -> Result<Vec<f32>> {
        self.forward_step_with(cache, token, position, kv, &mut NoopSink)
    }

    /// One decoding step; returns next-token logits. `sink` sees every
    /// matrix input and the raw K/V rows of this position.
    pub fn forward_step_with(
        &self,
        cache: &mut KvCache,
        token: u32,
        position: usize,
        kv: &KvCacheConfig,
        sink: &mut dyn ActivationSink,
    ) -> Result<Vec<f32>> {
        let cfg = &self.config;
        if position >= cfg.max_seq {
            return Err(Error::invalid(format!(
                "position {position} exceeds max_seq {}",
                cfg.max_seq
            )));
        }
        if token as usize >= cfg.vocab {
            return Err(Error::invalid(format!("token {token} outside vocabulary")));
        }
        if cache.n_layers() != cfg.n_layers || cache.len() != position {
            return Err(Error::invalid(format!(
                "KV cache holds {} positions over {} layers; step expects {position} over {}",
                cache.len(),
                cache.n_layers(),
                cfg.n_layers
            )));
        }
        if kv.n_layers() != cfg.n_layers {
            return Err(Error::invalid(format!(
                "KV config covers {} layers, model has {}",
                kv.n_layers(),
                cfg.n_layers
            )));
        }

        let mut x: Vec<f32> = self
            .embed
            .row(token as usize)
            .iter()
            .zip(self.pos.row(position))
            .map(|(e, p)| e + p)
            .collect();

        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        for (l, w) in self.layers.iter().enumerate() {
            let a = rms_norm(&x, w.attn_norm);
            for kind in [MatrixKind::Wq, MatrixKind::Wk, MatrixKind::Wv] {
                sink.record(l, Site::Input(kind), &a);
            }
            let q = w.wq.matvec(&a)?;
            let k = w.wk.matvec(&a)?;
            let v = w.wv.matvec(&a)?;
            sink.record(l, Site::Key, &k);
            sink.record(l, Site::Value, &v);

            let bits = kv.bits()[l];
            let layer = cache.layer_mut(l);
            layer.keys.push(CachedRow::store(k, bits)?);
            layer.values.push(CachedRow::store(v, bits)?);
            let keys: Vec<Vec<f32>> = layer.keys.iter().map(CachedRow::read).collect();
            let values: Vec<Vec<f32>> = layer.values.iter().map(CachedRow::read).collect();

            let mut attn = vec![0f32; cfg.d_model];
            for h in 0..cfg.n_heads {
                let span = h * dh..(h + 1) * dh;
                let scores: Vec<f64> = keys
                    .iter()
                    .map(|kr| dot(&q[span.clone()], &kr[span.clone()]) * scale)
                    .collect();
                let probs = tensor::softmax_f64(&scores);
                let mut acc = vec![0f64; dh];
                for (p, vr) in probs.iter().zip(&values) {
                    for (o, &vv) in acc.iter_mut().zip(&vr[span.clone()]) {
                        *o += p * vv as f64;
                    }
                }
                for (o, a) in attn[span].iter_mut().zip(acc) {
                    *o = a as f32;
                }
            }
            sink.record(l, Site::Input(MatrixKind::Wo), &attn);
            let o = w.wo.matvec(&attn)?;
            x.iter_mut().zip(&o).for_each(|(xi, oi)| *xi += oi);

            let m = rms_norm(&x, w.mlp_norm);
            sink.record(l, Site::Input(MatrixKind::Wup), &m);
            let up: Vec<f32> = w.wup.matvec(&m)?.into_iter().map(gelu).collect();
            sink.record(l, Site::Input(MatrixKind::Wdown), &up);
            let down = w.wdown.matvec(&up)?;
            x.iter_mut().zip(&down).for_each(|(xi, di)| *xi += di);
        }

        let y = rms_norm(&x, self.final_norm);
        self.head.vecmat(&y)
    }
}

/// Teacher-forced forward over a whole sequence without a KV cache.
///
/// Returns one logits row per input position. Works on full activation
/// matrices, so it shares no state with the incremental path.
pub fn forward_full(model: &Checkpoint, tokens: &[u32]) -> Result<Tensor2D> {
    let cfg = model.config;
    let t = tokens.len();
    if t == 0 || t > cfg.max_seq {
        return Err(Error::invalid(format!(
            "sequence length {t} must be in 1..={}",
            cfg.max_seq
        )));
    }
    let embed = model.tensor(EMBED)?;
    let pos = model.tensor(POS)?;
    let mut x = Tensor2D::from_fn(t, cfg.d_model, |i, j| {
        embed.get(tokens[i] as usize, j) + pos.get(i, j)
    });
    let norm_rows = |x: &Tensor2D, gain: &[f32]| -> Tensor2D {
        let rows: Vec<f32> = (0..x.rows()).flat_map(|i| rms_norm(x.row(i), gain)).collect();
        Tensor2D::new(x.rows(), x.cols(), rows).expect("shape preserved")
    };
    let linear = |x: &Tensor2D, w: &Tensor2D| x.matmul(&w.transpose());

    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    for l in 0..cfg.n_layers {
        let a = norm_rows(&x, model.tensor(&attn_norm_name(l))?.data());
        let q = linear(&a, model.matrix(l, MatrixKind::Wq)?)?;
        let k = linear(&a, model.matrix(l, MatrixKind::Wk)?)?;
        let v = linear(&a, model.matrix(l, MatrixKind::Wv)?)?;

        let mut attn = Tensor2D::zeros(t, cfg.d_model);
        for h in 0..cfg.n_heads {
            let off = h * dh;
            for i in 0..t {
                let scores: Vec<f64> = (0..=i)
                    .map(|s| dot(&q.row(i)[off..off + dh], &k.row(s)[off..off + dh]) * scale)
                    .collect();
                let probs = tensor::softmax_f64(&scores);
                for c in 0..dh {
                    let mut acc = 0f64;
                    for (s, p) in probs.iter().enumerate() {
                        acc += p * v.get(s, off + c) as f64;
                    }
                    attn.set(i, off + c, acc as f32);
                }
            }
        }
        let o = linear(&attn, model.matrix(l, MatrixKind::Wo)?)?;
        x.data_mut().iter_mut().zip(o.data()).for_each(|(a, b)| *a += b);

        let m = norm_rows(&x, model.tensor(&mlp_norm_name(l))?.data());
        let up = linear(&m, model.matrix(l, MatrixKind::Wup)?)?.map(gelu);
        let down = linear(&up, model.matrix(l, MatrixKind::Wdown)?)?;
        x.data_mut().iter_mut().zip(down.data()).for_each(|(a, b)| *a += b);
    }
    let y = norm_rows(&x, model.tensor(FINAL_NORM)?.data());
    y.matmul(model.tensor(HEAD)?)
}
