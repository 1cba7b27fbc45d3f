//! C ABI for the optspa workbench.
//!
//! Every fallible function returns an [`OptspaStatus`]; on failure a message
//! is available from [`optspa_last_error`] on the same thread. Objects are
//! opaque handles released with their `_free` function. Strings returned to
//! the caller are released with [`optspa_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use optspa::model::{calibrate, generate_toy_model, perplexity, CalibrationStats, Checkpoint, KvCacheConfig, ModelConfig};
use optspa::prune::{apply_profile, measure_sparsity, Granularity, MetricKind, SparsityProfile};
use optspa::quant::{dequantize, quantize, QuantizedBlock};
use optspa::search::{run_search, Objective, SearchOptions, SearchOutcome, SearchSpace};
use optspa::Error;
use serde_json::{json, Value};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptspaStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    Format = 3,
    Parse = 4,
    Io = 5,
    SearchFailed = 6,
    Panic = 7,
}

/// Importance metric used to rank weights for pruning.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptspaMetric {
    Magnitude = 0,
    Wanda = 1,
    Optspa = 2,
}

impl From<OptspaMetric> for MetricKind {
    fn from(m: OptspaMetric) -> Self {
        match m {
            OptspaMetric::Magnitude => MetricKind::Magnitude,
            OptspaMetric::Wanda => MetricKind::Wanda,
            OptspaMetric::Optspa => MetricKind::OptSpa,
        }
    }
}

/// Opaque model checkpoint.
pub struct OptspaModel(Checkpoint);

/// Opaque calibration statistics.
pub struct OptspaCalib {
    config: ModelConfig,
    stats: CalibrationStats,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<Vec<u8>>) {
    let mut bytes = msg.into();
    bytes.retain(|&b| b != 0);
    let c = CString::new(bytes).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(OptspaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidInput(_) => OptspaStatus::InvalidArgument,
            Error::Format { .. } => OptspaStatus::Format,
            Error::Parse { .. } | Error::Json(_) => OptspaStatus::Parse,
            Error::SearchFailed(_) => OptspaStatus::SearchFailed,
            Error::Io { .. } | Error::Csv(_) => OptspaStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult<T = ()> = Result<T, Failure>;

fn null(what: &str) -> Failure {
    Failure(OptspaStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(OptspaStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> FfiResult) -> OptspaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OptspaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            OptspaStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(m: *const OptspaModel) -> FfiResult<&'a Checkpoint> {
    m.as_ref().map(|m| &m.0).ok_or_else(|| null("model"))
}

unsafe fn calib_ref<'a>(c: *const OptspaCalib, model: &Checkpoint) -> FfiResult<Option<&'a CalibrationStats>> {
    match c.as_ref() {
        None => Ok(None),
        Some(c) if c.config != model.config => Err(invalid("calibration stats belong to a different architecture")),
        Some(c) => Ok(Some(&c.stats)),
    }
}

unsafe fn str_arg(s: *const c_char, what: &str) -> FfiResult<String> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> FfiResult<&'a [T]> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_out<'a, T>(p: *mut T, n: usize, what: &str) -> FfiResult<&'a mut [T]> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> FfiResult {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn kv_config(bits: &[u8], n_layers: usize) -> FfiResult<KvCacheConfig> {
    if bits.is_empty() {
        return Ok(KvCacheConfig::passthrough(n_layers));
    }
    if bits.len() != n_layers {
        return Err(invalid(format!("{} KV bit-widths for {n_layers} layers", bits.len())));
    }
    Ok(KvCacheConfig::new(bits.to_vec())?)
}

fn json_string(v: &Value) -> FfiResult<*mut c_char> {
    let c = CString::new(v.to_string()).map_err(|_| invalid("JSON contains NUL"))?;
    Ok(c.into_raw())
}

fn outcome_json(out: &SearchOutcome) -> Value {
    json!({
        "best_ppl": out.best_ppl,
        "best": out.best_values,
        "evaluations": out.evaluations,
        "ledger": out.ledger.iter().map(|r| r.to_json()).collect::<Vec<_>>(),
    })
}

/// Message of the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn optspa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, human-readable name of a status code.
#[no_mangle]
pub extern "C" fn optspa_status_name(status: OptspaStatus) -> *const c_char {
    let s: &'static CStr = match status {
        OptspaStatus::Ok => c"ok",
        OptspaStatus::InvalidArgument => c"invalid argument",
        OptspaStatus::NullPointer => c"null pointer",
        OptspaStatus::Format => c"format error",
        OptspaStatus::Parse => c"parse error",
        OptspaStatus::Io => c"i/o error",
        OptspaStatus::SearchFailed => c"search failed",
        OptspaStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn optspa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a seeded random toy model.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn optspa_model_generate(
    n_layers: usize,
    d_model: usize,
    n_heads: usize,
    d_ff: usize,
    max_seq: usize,
    seed: u64,
    out: *mut *mut OptspaModel,
) -> OptspaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = ModelConfig::new(n_layers, d_model, n_heads, d_ff, max_seq);
        let m = generate_toy_model(cfg, seed)?;
        write_out(out, Box::into_raw(Box::new(OptspaModel(m))), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn optspa_model_load(path: *const c_char, out: *mut *mut OptspaModel) -> OptspaStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let m = Checkpoint::load(&path)?;
        write_out(out, Box::into_raw(Box::new(OptspaModel(m))), "out")
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn optspa_model_save(model: *const OptspaModel, path: *const c_char) -> OptspaStatus {
    guard(|| {
        let m = model_ref(model)?;
        let path = PathBuf::from(str_arg(path, "path")?);
        Ok(m.save(&path)?)
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn optspa_model_free(model: *mut OptspaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of decoder layers, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn optspa_model_n_layers(model: *const OptspaModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config.n_layers)
}

/// Fraction of zero weights over all prunable matrices.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn optspa_model_sparsity(model: *const OptspaModel, out: *mut f64) -> OptspaStatus {
    guard(|| {
        let m = model_ref(model)?;
        write_out(out, measure_sparsity(m).overall(), "out")
    })
}

/// Records activation norms over the first `n_samples` of `tokens`.
///
/// # Safety
/// `tokens` must point to `n_tokens` values; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn optspa_calibrate(
    model: *const OptspaModel,
    tokens: *const u32,
    n_tokens: usize,
    n_samples: usize,
    out: *mut *mut OptspaCalib,
) -> OptspaStatus {
    guard(|| {
        let m = model_ref(model)?;
        let toks = slice_arg(tokens, n_tokens, "tokens")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let stats = calibrate(m, toks, n_samples)?;
        let c = OptspaCalib {
            config: m.config,
            stats,
        };
        write_out(out, Box::into_raw(Box::new(c)), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn optspa_calib_load(path: *const c_char, out: *mut *mut OptspaCalib) -> OptspaStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let (config, stats) = CalibrationStats::load(&path)?;
        write_out(out, Box::into_raw(Box::new(OptspaCalib { config, stats })), "out")
    })
}

/// # Safety
/// `calib` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn optspa_calib_save(calib: *const OptspaCalib, path: *const c_char) -> OptspaStatus {
    guard(|| {
        let c = calib.as_ref().ok_or_else(|| null("calib"))?;
        let path = PathBuf::from(str_arg(path, "path")?);
        Ok(c.stats.save(&c.config, &path)?)
    })
}

/// Releases a calibration handle. Null is ignored.
///
/// # Safety
/// `calib` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn optspa_calib_free(calib: *mut OptspaCalib) {
    if !calib.is_null() {
        drop(Box::from_raw(calib));
    }
}

/// Perplexity over `tokens` in `ctx`-token windows. `kv_bits` may be null
/// with `n_kv_bits == 0` for an unquantized cache.
///
/// # Safety
/// Pointers must be valid for the given lengths; `out_ppl` writable.
#[no_mangle]
pub unsafe extern "C" fn optspa_perplexity(
    model: *const OptspaModel,
    tokens: *const u32,
    n_tokens: usize,
    kv_bits: *const u8,
    n_kv_bits: usize,
    ctx: usize,
    out_ppl: *mut f64,
) -> OptspaStatus {
    guard(|| {
        let m = model_ref(model)?;
        let toks = slice_arg(tokens, n_tokens, "tokens")?;
        let kv = kv_config(slice_arg(kv_bits, n_kv_bits, "kv_bits")?, m.config.n_layers)?;
        write_out(out_ppl, perplexity(m, toks, &kv, ctx)?, "out_ppl")
    })
}

unsafe fn prune_with(
    model: *const OptspaModel,
    calib: *const OptspaCalib,
    metric: OptspaMetric,
    profile: SparsityProfile,
    out: *mut *mut OptspaModel,
) -> FfiResult {
    let m = model_ref(model)?;
    let c = calib_ref(calib, m)?;
    if out.is_null() {
        return Err(null("out"));
    }
    let (pruned, _) = apply_profile(m, &profile, c, metric.into(), Granularity::Matrix)?;
    write_out(out, Box::into_raw(Box::new(OptspaModel(pruned))), "out")
}

/// Prunes every matrix at `ratio`. `calib` may be null for the magnitude metric.
///
/// # Safety
/// Handles must be live or null where allowed; `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn optspa_prune_uniform(
    model: *const OptspaModel,
    calib: *const OptspaCalib,
    metric: OptspaMetric,
    ratio: f64,
    out: *mut *mut OptspaModel,
) -> OptspaStatus {
    guard(|| {
        let n = model_ref(model)?.config.n_layers;
        prune_with(model, calib, metric, SparsityProfile::uniform(n, ratio), out)
    })
}

/// Prunes with a sparsity profile given as a JSON document.
///
/// # Safety
/// `profile_json` must be a NUL-terminated string; other pointers as above.
#[no_mangle]
pub unsafe extern "C" fn optspa_prune_profile(
    model: *const OptspaModel,
    calib: *const OptspaCalib,
    metric: OptspaMetric,
    profile_json: *const c_char,
    out: *mut *mut OptspaModel,
) -> OptspaStatus {
    guard(|| {
        let text = str_arg(profile_json, "profile_json")?;
        let profile: SparsityProfile = serde_json::from_str(&text).map_err(Error::from)?;
        prune_with(model, calib, metric, profile, out)
    })
}

/// Quantizes `n` values to `bits`-bit codes with one shared min and step.
///
/// # Safety
/// `values` and `out_codes` must hold `n` elements; scalars writable.
#[no_mangle]
pub unsafe extern "C" fn optspa_quantize(
    values: *const f32,
    n: usize,
    bits: u8,
    out_codes: *mut u32,
    out_vmin: *mut f32,
    out_step: *mut f32,
) -> OptspaStatus {
    guard(|| {
        let v = slice_arg(values, n, "values")?;
        if out_vmin.is_null() || out_step.is_null() {
            return Err(null("out_vmin/out_step"));
        }
        let q = quantize(v, bits)?;
        slice_out(out_codes, n, "out_codes")?.copy_from_slice(&q.codes);
        write_out(out_vmin, q.vmin, "out_vmin")?;
        write_out(out_step, q.step, "out_step")
    })
}

/// Reconstructs `vmin + code * step` for `n` codes.
///
/// # Safety
/// `codes` and `out_values` must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn optspa_dequantize(
    codes: *const u32,
    n: usize,
    bits: u8,
    vmin: f32,
    step: f32,
    out_values: *mut f32,
) -> OptspaStatus {
    guard(|| {
        let c = slice_arg(codes, n, "codes")?;
        if !(2..=16).contains(&bits) {
            return Err(invalid(format!("bit-width {bits} outside 2..=16")));
        }
        let max = (1u32 << bits) - 1;
        if let Some(&bad) = c.iter().find(|&&x| x > max) {
            return Err(invalid(format!("code {bad} exceeds {max}")));
        }
        let q = QuantizedBlock {
            codes: c.to_vec(),
            bits,
            vmin,
            step,
        };
        slice_out(out_values, n, "out_values")?.copy_from_slice(&dequantize(&q));
        Ok(())
    })
}

/// Per-layer sparsity search. On success `*out_json` holds
/// `{"best_ppl", "best", "evaluations", "ledger"}`; free it with
/// [`optspa_string_free`].
///
/// # Safety
/// Pointers must be valid for the given lengths; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn optspa_search_sparsity(
    model: *const OptspaModel,
    calib: *const OptspaCalib,
    metric: OptspaMetric,
    overall: f64,
    tokens: *const u32,
    n_tokens: usize,
    ctx: usize,
    trials: usize,
    seed: u64,
    out_json: *mut *mut c_char,
) -> OptspaStatus {
    guard(|| {
        let m = model_ref(model)?;
        let c = calib_ref(calib, m)?;
        let toks = slice_arg(tokens, n_tokens, "tokens")?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let space = SearchSpace::sparsity(&m.config, overall)?;
        let objective = Objective::Sparsity {
            calib: c,
            metric: metric.into(),
            granularity: Granularity::Matrix,
            kv: KvCacheConfig::passthrough(m.config.n_layers),
        };
        let out = run_search(m, toks, ctx, &space, &objective, &SearchOptions::new(trials, seed))?;
        write_out(out_json, json_string(&outcome_json(&out))?, "out_json")
    })
}

/// Per-layer KV bit-width search over {6, 8}; output as for
/// [`optspa_search_sparsity`].
///
/// # Safety
/// Pointers must be valid for the given lengths; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn optspa_search_bandwidth(
    model: *const OptspaModel,
    tokens: *const u32,
    n_tokens: usize,
    ctx: usize,
    trials: usize,
    seed: u64,
    out_json: *mut *mut c_char,
) -> OptspaStatus {
    guard(|| {
        let m = model_ref(model)?;
        let toks = slice_arg(tokens, n_tokens, "tokens")?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let space = SearchSpace::bandwidth(m.config.n_layers)?;
        let out = run_search(m, toks, ctx, &space, &Objective::Bandwidth, &SearchOptions::new(trials, seed))?;
        write_out(out_json, json_string(&outcome_json(&out))?, "out_json")
    })
}
