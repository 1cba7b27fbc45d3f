//! Library results checked against independent reference computations and
//! the frozen fixture values.

mod common;

use std::collections::BTreeMap;

use common::*;
use optspa::model::{
    calibrate, forward_full, generate_toy_model, perplexity, windows, ActivationSink, Checkpoint, KvCacheConfig,
    MatrixKind, ModelConfig, Site, Transformer,
};
use optspa::prune::{apply_profile, measure_sparsity, reconstruction_loss, BinaryMask, Granularity, MetricKind, SparsityProfile};
use optspa::tensor::{axis_l2_norms, Axis, Tensor2D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Keeps every input row seen by every prunable matrix.
#[derive(Default)]
struct Collect {
    rows: BTreeMap<String, Vec<Vec<f32>>>,
}

impl ActivationSink for Collect {
    fn record(&mut self, layer: usize, site: Site, values: &[f32]) {
        if let Site::Input(kind) = site {
            self.rows.entry(kind.tensor_name(layer)).or_default().push(values.to_vec());
        }
    }
}

#[test]
fn calibration_matches_full_activation_matrix() {
    let model = toy3();
    let tokens = &corpus()[..64];
    let stats = calibrate(&model, tokens, 64).unwrap();

    let tf = Transformer::new(&model).unwrap();
    let kv = KvCacheConfig::passthrough(model.config.n_layers);
    let mut sink = Collect::default();
    for w in tokens.chunks(model.config.max_seq) {
        let mut cache = tf.new_cache();
        for (pos, &t) in w.iter().enumerate() {
            tf.forward_step_with(&mut cache, t, pos, &kv, &mut sink).unwrap();
        }
    }
    assert_eq!(sink.rows.len(), 6 * model.config.n_layers);
    for (name, rows) in &sink.rows {
        assert_eq!(rows.len(), 64);
        let x = Tensor2D::new(rows.len(), rows[0].len(), rows.concat()).unwrap();
        let want = axis_l2_norms(&x, Axis::Col).unwrap();
        let got = stats.require(name).unwrap();
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!((*g as f64 - w).abs() <= 1e-5 * w.max(1e-12), "{name}: {g} vs {w}");
        }
    }
}

/// `exp(mean(-ln p))` with probabilities collected position by position.
fn nll_oracle(model: &Checkpoint, corpus: &[u32], ctx: usize, full: bool) -> f64 {
    let tf = Transformer::new(model).unwrap();
    let kv = KvCacheConfig::passthrough(model.config.n_layers);
    let mut nll = Vec::new();
    for w in windows(corpus, ctx) {
        let logits: Vec<Vec<f32>> = if full {
            let l = forward_full(model, w).unwrap();
            (0..w.len()).map(|i| l.row(i).to_vec()).collect()
        } else {
            let mut cache = tf.new_cache();
            w.iter()
                .enumerate()
                .map(|(pos, &t)| tf.forward_step(&mut cache, t, pos, &kv).unwrap())
                .collect()
        };
        for i in 0..w.len() - 1 {
            let z = &logits[i];
            let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
            let denom: f64 = z.iter().map(|&v| (v as f64 - m).exp()).sum();
            let p = (z[w[i + 1] as usize] as f64 - m).exp() / denom;
            nll.push(-p.ln());
        }
    }
    (nll.iter().sum::<f64>() / nll.len() as f64).exp()
}

#[test]
fn perplexity_matches_nll_accumulation() {
    let model = toy8();
    let eval = eval_tokens();
    let ppl = perplexity(&model, &eval, &KvCacheConfig::passthrough(8), CTX).unwrap();
    let oracle = nll_oracle(&model, &eval, CTX, false);
    assert!((ppl - oracle).abs() <= 1e-6 * oracle, "{ppl} vs {oracle}");
    // Ragged final window.
    let short = &eval[..77];
    let ppl = perplexity(&model, short, &KvCacheConfig::passthrough(8), CTX).unwrap();
    let oracle = nll_oracle(&model, short, CTX, false);
    assert!((ppl - oracle).abs() <= 1e-6 * oracle);
}

#[test]
fn cached_perplexity_matches_cache_free_forward() {
    let model = toy3();
    let eval = eval_tokens();
    let ppl = perplexity(&model, &eval, &KvCacheConfig::passthrough(3), CTX).unwrap();
    let oracle = nll_oracle(&model, &eval, CTX, true);
    assert!((ppl - oracle).abs() <= 1e-5 * oracle, "{ppl} vs {oracle}");
}

#[test]
fn reconstruction_loss_matches_elementwise_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let w = Tensor2D::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let x = Tensor2D::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let keep: Vec<bool> = (0..16).map(|_| rng.random_bool(0.5)).collect();
        let mask = BinaryMask::from_keep(4, 4, keep.clone()).unwrap();
        let mut want = 0f64;
        for i in 0..4 {
            for j in 0..4 {
                let mut d = 0f64;
                for k in 0..4 {
                    if !keep[i * 4 + k] {
                        d += w.get(i, k) as f64 * x.get(k, j) as f64;
                    }
                }
                want += d * d;
            }
        }
        let got = reconstruction_loss(&w, &x, &mask).unwrap();
        assert!((got - want).abs() <= 1e-6 * want.max(1e-12), "{got} vs {want}");
    }
}

#[test]
fn shipped_fixtures_regenerate_bitwise() {
    let toy8_bytes = std::fs::read(fixture("toy8.opsc")).unwrap();
    let regenerated = generate_toy_model(ModelConfig::new(8, 32, 4, 64, 64), 4).unwrap();
    assert_eq!(regenerated.to_container().to_bytes(), toy8_bytes);
    let toy3_bytes = std::fs::read(fixture("toy3.opsc")).unwrap();
    let regenerated = generate_toy_model(ModelConfig::new(3, 16, 2, 32, 32), 3).unwrap();
    assert_eq!(regenerated.to_container().to_bytes(), toy3_bytes);
}

#[test]
fn fixture_baseline_perplexity() {
    let model = toy8();
    let ppl = perplexity(&model, &eval_tokens(), &KvCacheConfig::passthrough(8), CTX).unwrap();
    assert!(ppl.is_finite() && ppl > 1.0);
    assert_eq!(format!("{ppl:.4}"), format!("{TOY8_BASELINE_PPL:.4}"));
}

#[test]
fn fixture_eight_bit_cache_no_worse_than_six() {
    let model = toy8();
    let eval = eval_tokens();
    let p8 = perplexity(&model, &eval, &KvCacheConfig::uniform(8, 8), CTX).unwrap();
    let p6 = perplexity(&model, &eval, &KvCacheConfig::uniform(8, 6), CTX).unwrap();
    assert!(p8 <= p6, "all-8 {p8} vs all-6 {p6}");
}

#[test]
fn fixture_half_pruned_hits_budget() {
    let model = toy8();
    let calib = calib_for(&model);
    let (pruned, masks) = apply_profile(
        &model,
        &SparsityProfile::uniform(8, 0.5),
        Some(&calib),
        MetricKind::OptSpa,
        Granularity::Matrix,
    )
    .unwrap();
    let report = measure_sparsity(&pruned);
    assert!((report.overall() - 0.5).abs() <= 1.0 / report.total as f64);
    for (name, m) in &masks {
        let zeros = m.as_slice().iter().filter(|k| !**k).count();
        assert_eq!(zeros, m.numel() / 2, "{name}");
        let w = pruned.tensor(name).unwrap();
        let dead = w.data().iter().filter(|v| **v == 0.0).count();
        assert!(dead >= zeros);
    }
}

#[test]
fn fixture_per_module_ratios() {
    let model = toy8();
    let calib = calib_for(&model);
    let modules: BTreeMap<String, f64> = MatrixKind::ALL
        .iter()
        .map(|k| (k.as_str().to_string(), if *k == MatrixKind::Wq { 0.55 } else { 0.45 }))
        .collect();
    let json = serde_json::json!({
        "overall": 0.46,
        "layers": (0..8).map(|i| serde_json::json!({"index": i, "modules": modules})).collect::<Vec<_>>(),
    });
    let profile: SparsityProfile = serde_json::from_value(json).unwrap();
    let (_, masks) = apply_profile(&model, &profile, Some(&calib), MetricKind::OptSpa, Granularity::Matrix).unwrap();
    for (name, m) in &masks {
        let r = if name.ends_with(".Wq") { 0.55 } else { 0.45 };
        let zeros = m.as_slice().iter().filter(|k| !**k).count();
        assert_eq!(zeros, (r * m.numel() as f64).floor() as usize, "{name}");
    }
}
