use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{MatrixKind, ModelConfig};
use super::container::Container;
use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

pub const EMBED: &str = "embed";
pub const POS: &str = "pos";
pub const HEAD: &str = "head";
pub const FINAL_NORM: &str = "final_norm";

pub fn attn_norm_name(layer: usize) -> String {
    format!("L{layer}.attn_norm")
}

pub fn mlp_norm_name(layer: usize) -> String {
    format!("L{layer}.mlp_norm")
}

/// Weights of a toy causal decoder plus its architecture.
///
/// Prunable matrices are stored `out x in` so that column `j` is input
/// feature `j`. `head` is `d_model x vocab`; `embed` and `pos` are lookup
/// tables with one row per token / position.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor2D>,
}

impl Checkpoint {
    /// Every tensor name with the shape the config implies.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
        let d = config.d_model;
        let mut shapes = vec![
            (EMBED.to_string(), (config.vocab, d)),
            (POS.to_string(), (config.max_seq, d)),
            (HEAD.to_string(), (d, config.vocab)),
            (FINAL_NORM.to_string(), (1, d)),
        ];
        for l in 0..config.n_layers {
            shapes.push((attn_norm_name(l), (1, d)));
            shapes.push((mlp_norm_name(l), (1, d)));
            for kind in MatrixKind::ALL {
                shapes.push((kind.tensor_name(l), config.matrix_shape(kind)));
            }
        }
        shapes
    }

    pub fn new(config: ModelConfig, tensors: BTreeMap<String, Tensor2D>) -> Result<Self> {
        config.validate()?;
        let expected = Self::expected_shapes(&config);
        for (name, shape) in &expected {
            match tensors.get(name) {
                None => return Err(Error::invalid(format!("checkpoint is missing tensor {name}"))),
                Some(t) if t.shape() != *shape => {
                    return Err(Error::invalid(format!(
                        "tensor {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if tensors.len() != expected.len() {
            let extra = tensors
                .keys()
                .find(|k| !expected.iter().any(|(n, _)| n == *k))
                .cloned()
                .unwrap_or_default();
            return Err(Error::invalid(format!("checkpoint has unexpected tensor {extra}")));
        }
        Ok(Self { config, tensors })
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor2D> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::invalid(format!("no tensor named {name}")))
    }

    pub fn matrix(&self, layer: usize, kind: MatrixKind) -> Result<&Tensor2D> {
        self.tensor(&kind.tensor_name(layer))
    }

    /// Names of the prunable matrices, layer-major in `MatrixKind::ALL` order.
    pub fn prunable_names(&self) -> Vec<String> {
        (0..self.config.n_layers)
            .flat_map(|l| MatrixKind::ALL.into_iter().map(move |k| k.tensor_name(l)))
            .collect()
    }

    pub fn to_container(&self) -> Container {
        Container {
            metadata: self.config.to_metadata(),
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        }
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let config = ModelConfig::from_metadata(&c.metadata)?;
        let mut tensors = BTreeMap::new();
        for (name, t) in c.tensors {
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::invalid(format!("duplicate tensor {name}")));
            }
        }
        Self::new(config, tensors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}

/// Weight multiplier for layer `layer`: `1 + 0.5 sin(pi l / (L - 1))`.
///
/// Middle layers get larger weights than the ends, so layers differ in how
/// much pruning hurts them.
pub fn depth_scale(layer: usize, n_layers: usize) -> f64 {
    if n_layers <= 1 {
        return 1.0;
    }
    1.0 + 0.5 * (PI * layer as f64 / (n_layers - 1) as f64).sin()
}

/// Deterministic random weights for `config`.
pub fn generate_toy_model(config: ModelConfig, seed: u64) -> Result<Checkpoint> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.d_model;

    let mut gaussian = |rows: usize, cols: usize, std: f64| -> Tensor2D {
        let dist = Normal::new(0.0, std).expect("positive std");
        Tensor2D::from_fn(rows, cols, |_, _| dist.sample(&mut rng) as f32)
    };

    let mut tensors = BTreeMap::new();
    tensors.insert(EMBED.to_string(), gaussian(config.vocab, d, 1.0));
    tensors.insert(POS.to_string(), gaussian(config.max_seq, d, 0.3));
    for l in 0..config.n_layers {
        let scale = depth_scale(l, config.n_layers);
        for kind in MatrixKind::ALL {
            let (rows, cols) = config.matrix_shape(kind);
            let std = scale / (cols as f64).sqrt();
            tensors.insert(kind.tensor_name(l), gaussian(rows, cols, std));
        }
        tensors.insert(attn_norm_name(l), Tensor2D::row_vector(vec![1.0; d]));
        tensors.insert(mlp_norm_name(l), Tensor2D::row_vector(vec![1.0; d]));
    }
    tensors.insert(HEAD.to_string(), gaussian(d, config.vocab, 2.0 / (d as f64).sqrt()));
    tensors.insert(FINAL_NORM.to_string(), Tensor2D::row_vector(vec![1.0; d]));
    Checkpoint::new(config, tensors)
}
