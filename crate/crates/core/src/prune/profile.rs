use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mask::{select_mask_with, BinaryMask, Granularity};
use super::metric::MetricKind;
use crate::error::{Error, Result};
use crate::model::{parse_matrix_name, CalibrationStats, Checkpoint, MatrixKind, ModelConfig};

/// Tolerance on the budget comparison `weighted mean >= overall`.
pub const BUDGET_EPS: f64 = 1e-9;

/// Ratio assignment for one decoder layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerSparsity {
    Uniform { index: usize, ratio: f64 },
    PerModule { index: usize, modules: BTreeMap<String, f64> },
}

impl LayerSparsity {
    pub fn index(&self) -> usize {
        match self {
            LayerSparsity::Uniform { index, .. } | LayerSparsity::PerModule { index, .. } => *index,
        }
    }

    fn ratios(&self) -> Result<[f64; 6]> {
        match self {
            LayerSparsity::Uniform { ratio, .. } => Ok([*ratio; 6]),
            LayerSparsity::PerModule { index, modules } => {
                for name in modules.keys() {
                    name.parse::<MatrixKind>()?;
                }
                let mut out = [0.0; 6];
                for (slot, kind) in out.iter_mut().zip(MatrixKind::ALL) {
                    *slot = *modules.get(kind.as_str()).ok_or_else(|| {
                        Error::invalid(format!("layer {index}: no ratio for module {kind}"))
                    })?;
                }
                Ok(out)
            }
        }
    }
}

/// Per-layer (optionally per-matrix) pruning ratios under a global budget.
///
/// Serialized as `{"overall": r, "layers": [{"index": i, "ratio": r} |
/// {"index": i, "modules": {"Wq": r, ...}}]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityProfile {
    pub overall: f64,
    pub layers: Vec<LayerSparsity>,
}

impl SparsityProfile {
    pub fn uniform(n_layers: usize, ratio: f64) -> Self {
        Self::from_layer_ratios(ratio, &vec![ratio; n_layers])
    }

    pub fn from_layer_ratios(overall: f64, ratios: &[f64]) -> Self {
        Self {
            overall,
            layers: ratios
                .iter()
                .enumerate()
                .map(|(index, &ratio)| LayerSparsity::Uniform { index, ratio })
                .collect(),
        }
    }

    /// Ratios indexed `[layer][MatrixKind::ALL position]`, after checking that
    /// every layer appears exactly once and every ratio is in `[0, 1]`.
    pub fn resolve(&self, config: &ModelConfig) -> Result<Vec<[f64; 6]>> {
        let mut out: Vec<Option<[f64; 6]>> = vec![None; config.n_layers];
        for entry in &self.layers {
            let idx = entry.index();
            let slot = out
                .get_mut(idx)
                .ok_or_else(|| Error::invalid(format!("profile names layer {idx}, model has {}", config.n_layers)))?;
            if slot.is_some() {
                return Err(Error::invalid(format!("profile lists layer {idx} twice")));
            }
            let ratios = entry.ratios()?;
            if let Some(r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
                return Err(Error::invalid(format!("layer {idx}: ratio {r} outside [0, 1]")));
            }
            *slot = Some(ratios);
        }
        out.into_iter()
            .enumerate()
            .map(|(l, r)| r.ok_or_else(|| Error::invalid(format!("profile has no entry for layer {l}"))))
            .collect()
    }

    /// Element-count-weighted mean ratio over all prunable matrices.
    pub fn weighted_mean(&self, config: &ModelConfig) -> Result<f64> {
        let resolved = self.resolve(config)?;
        let mut zeros = 0f64;
        let mut total = 0f64;
        for ratios in &resolved {
            for (r, kind) in ratios.iter().zip(MatrixKind::ALL) {
                let (rows, cols) = config.matrix_shape(kind);
                let n = (rows * cols) as f64;
                zeros += r * n;
                total += n;
            }
        }
        Ok(zeros / total)
    }

    /// True when the weighted mean meets or exceeds `overall`.
    pub fn meets_budget(&self, config: &ModelConfig) -> Result<bool> {
        Ok(self.weighted_mean(config)? >= self.overall - BUDGET_EPS)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Scores and masks every prunable matrix at its profile ratio.
///
/// Returns the pruned copy and the mask of each matrix. Non-prunable tensors
/// are copied unchanged.
pub fn apply_profile(
    model: &Checkpoint,
    profile: &SparsityProfile,
    calib: Option<&CalibrationStats>,
    metric: MetricKind,
    granularity: Granularity,
) -> Result<(Checkpoint, BTreeMap<String, BinaryMask>)> {
    let resolved = profile.resolve(&model.config)?;
    if metric.needs_activations() && calib.is_none() {
        return Err(Error::invalid(format!("metric {metric} needs calibration statistics")));
    }
    let jobs: Vec<(String, f64)> = resolved
        .iter()
        .enumerate()
        .flat_map(|(l, ratios)| {
            MatrixKind::ALL
                .into_iter()
                .zip(ratios.iter().copied())
                .map(move |(k, r)| (k.tensor_name(l), r))
        })
        .collect();

    let pruned = jobs
        .into_par_iter()
        .map(|(name, ratio)| {
            let w = model.tensor(&name)?;
            let xnorm = match calib {
                Some(c) if metric.needs_activations() => Some(c.require(&name)?),
                _ => None,
            };
            let scores = metric.score(w, xnorm)?;
            let mask = select_mask_with(&scores, ratio, granularity)?;
            let pw = mask.apply(w)?;
            Ok((name, pw, mask))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = model.clone();
    let mut masks = BTreeMap::new();
    for (name, w, mask) in pruned {
        out.tensors.insert(name.clone(), w);
        masks.insert(name, mask);
    }
    Ok((out, masks))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparsityReport {
    pub per_matrix: BTreeMap<String, f64>,
    pub zeros: usize,
    pub total: usize,
}

impl SparsityReport {
    pub fn overall(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.zeros as f64 / self.total as f64
        }
    }

    /// Mean ratio of each layer, by layer index.
    pub fn per_layer(&self) -> BTreeMap<usize, f64> {
        let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for (name, r) in &self.per_matrix {
            if let Some((l, _)) = parse_matrix_name(name) {
                let e = acc.entry(l).or_default();
                e.0 += r;
                e.1 += 1;
            }
        }
        acc.into_iter().map(|(l, (s, n))| (l, s / n as f64)).collect()
    }
}

/// Zero fraction of every prunable matrix in `model`.
pub fn measure_sparsity(model: &Checkpoint) -> SparsityReport {
    let mut per_matrix = BTreeMap::new();
    let (mut zeros, mut total) = (0, 0);
    for name in model.prunable_names() {
        let t = &model.tensors[&name];
        let z = t.data().iter().filter(|&&v| v == 0.0).count();
        per_matrix.insert(name, if t.is_empty() { 0.0 } else { z as f64 / t.numel() as f64 });
        zeros += z;
        total += t.numel();
    }
    SparsityReport {
        per_matrix,
        zeros,
        total,
    }
}

pub fn measure_masks(masks: &BTreeMap<String, BinaryMask>) -> SparsityReport {
    let mut per_matrix = BTreeMap::new();
    let (mut zeros, mut total) = (0, 0);
    for (name, m) in masks {
        per_matrix.insert(name.clone(), m.sparsity());
        zeros += m.zeros();
        total += m.numel();
    }
    SparsityReport {
        per_matrix,
        zeros,
        total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{calibrate, generate_toy_model, tokenize_bytes};
    use crate::tensor::Tensor2D;

    fn setup() -> (Checkpoint, CalibrationStats) {
        let m = generate_toy_model(ModelConfig::new(3, 16, 2, 40, 16), 21).unwrap();
        let c = calibrate(&m, &tokenize_bytes("calibration text for the tiny model"), 30).unwrap();
        (m, c)
    }

    #[test]
    fn zero_profile_is_identity() {
        let (m, c) = setup();
        for metric in [MetricKind::Magnitude, MetricKind::Wanda, MetricKind::OptSpa] {
            let (p, _) = apply_profile(&m, &SparsityProfile::uniform(3, 0.0), Some(&c), metric, Granularity::Matrix)
                .unwrap();
            assert_eq!(p.to_container().to_bytes(), m.to_container().to_bytes());
        }
    }

    #[test]
    fn uniform_half_hits_ratio_per_matrix() {
        let (m, c) = setup();
        let (p, masks) =
            apply_profile(&m, &SparsityProfile::uniform(3, 0.5), Some(&c), MetricKind::OptSpa, Granularity::Matrix)
                .unwrap();
        let report = measure_sparsity(&p);
        for (name, r) in &report.per_matrix {
            let n = p.tensors[name].numel() as f64;
            assert!((r - 0.5).abs() <= 1.0 / n, "{name}: {r}");
        }
        assert!((report.overall() - 0.5).abs() <= 1.0 / report.total as f64);
        assert_eq!(measure_masks(&masks), report);
        // Embeddings and head untouched, original intact.
        for name in ["embed", "pos", "head", "final_norm"] {
            assert_eq!(p.tensors[name], m.tensors[name]);
        }
        assert_eq!(measure_sparsity(&m).zeros, 0);
    }

    #[test]
    fn per_module_ratios() {
        let (m, c) = setup();
        let modules: BTreeMap<String, f64> = MatrixKind::ALL
            .iter()
            .map(|k| (k.as_str().to_string(), if *k == MatrixKind::Wq { 0.55 } else { 0.45 }))
            .collect();
        let profile = SparsityProfile {
            overall: 0.45,
            layers: (0..3)
                .map(|index| LayerSparsity::PerModule {
                    index,
                    modules: modules.clone(),
                })
                .collect(),
        };
        let (p, _) = apply_profile(&m, &profile, Some(&c), MetricKind::Wanda, Granularity::Matrix).unwrap();
        let report = measure_sparsity(&p);
        for (name, r) in &report.per_matrix {
            let n = p.tensors[name].numel() as f64;
            let want = if name.ends_with(".Wq") { 0.55 } else { 0.45 };
            assert!((r - want).abs() <= 1.0 / n, "{name}: {r}");
        }
    }

    #[test]
    fn profile_errors() {
        let (m, c) = setup();
        let missing = SparsityProfile::from_layer_ratios(0.5, &[0.5, 0.5]);
        assert!(apply_profile(&m, &missing, Some(&c), MetricKind::OptSpa, Granularity::Matrix).is_err());
        let bad = SparsityProfile::from_layer_ratios(0.5, &[0.5, 1.5, 0.5]);
        assert!(bad.resolve(&m.config).is_err());
        let mut dup = SparsityProfile::uniform(3, 0.5);
        dup.layers[1] = LayerSparsity::Uniform { index: 0, ratio: 0.5 };
        assert!(dup.resolve(&m.config).is_err());
        let ok = SparsityProfile::uniform(3, 0.5);
        assert!(apply_profile(&m, &ok, None, MetricKind::OptSpa, Granularity::Matrix).is_err());
        assert!(apply_profile(&m, &ok, None, MetricKind::Magnitude, Granularity::Matrix).is_ok());
    }

    #[test]
    fn budget_check() {
        let cfg = ModelConfig::new(2, 16, 2, 40, 16);
        assert!(SparsityProfile::from_layer_ratios(0.5, &[0.45, 0.55]).meets_budget(&cfg).unwrap());
        assert!(!SparsityProfile::from_layer_ratios(0.5, &[0.45, 0.45]).meets_budget(&cfg).unwrap());
    }

    #[test]
    fn all_zero_model_measures_one() {
        let (mut m, _) = setup();
        for name in m.prunable_names() {
            let (r, c) = m.tensors[&name].shape();
            m.tensors.insert(name, Tensor2D::zeros(r, c));
        }
        let report = measure_sparsity(&m);
        assert!(report.per_matrix.values().all(|&r| r == 1.0));
        assert_eq!(report.overall(), 1.0);
    }

    #[test]
    fn json_forms() {
        let p: SparsityProfile = serde_json::from_str(
            r#"{"overall":0.5,"layers":[{"index":0,"ratio":0.45},{"index":1,"modules":{"Wq":0.5,"Wk":0.5,"Wv":0.5,"Wo":0.5,"Wup":0.5,"Wdown":0.6}}]}"#,
        )
        .unwrap();
        assert_eq!(p.layers[0], LayerSparsity::Uniform { index: 0, ratio: 0.45 });
        assert!(matches!(&p.layers[1], LayerSparsity::PerModule { modules, .. } if modules["Wdown"] == 0.6));
        let back: SparsityProfile = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
