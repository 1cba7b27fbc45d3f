use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use optspa::model::{
    calibrate, generate_toy_model, perplexity, tokenize_bytes, CalibrationStats, Checkpoint, KvCacheConfig,
    ModelConfig,
};
use optspa::prune::{apply_profile, measure_sparsity, Granularity, MetricKind, SparsityProfile};
use optspa::quant::{make_kv_config, BandwidthProfile};
use optspa::report::emit_report;
use optspa::search::{
    run_search, save_ledger, Objective, SearchOptions, SearchSpace, SearchOutcome, DEFAULT_TRIALS,
};
use optspa::{Error, Result};

const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(name = "optspa", version, about = "Layer-wise pruning and KV-cache bit-width search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded random toy checkpoint.
    GenModel(GenModelArgs),
    /// Record per-feature activation norms from a corpus.
    Calibrate(CalibrateArgs),
    /// Prune a checkpoint at a uniform ratio or with a profile file.
    Prune(PruneArgs),
    /// Print corpus perplexity.
    Eval(EvalArgs),
    /// Search per-layer sparsity ratios under an overall budget.
    SearchSparsity(SearchSparsityArgs),
    /// Search per-layer KV-cache bit-widths (half 8-bit, half 6-bit).
    SearchBandwidth(SearchBandwidthArgs),
    /// Summarize a trial ledger as CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenModelArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 8)]
    layers: usize,
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    d_ff: usize,
    #[arg(long, default_value_t = 64)]
    max_seq: usize,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Number of corpus tokens to run.
    #[arg(long, default_value_t = 512)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricArgs {
    #[arg(long, default_value = "optspa", value_parser = parse_metric)]
    metric: MetricKind,
    /// Rank weights within each output row instead of across the matrix.
    #[arg(long)]
    per_row: bool,
}

impl MetricArgs {
    fn granularity(&self) -> Granularity {
        if self.per_row {
            Granularity::PerRow
        } else {
            Granularity::Matrix
        }
    }
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    calib: Option<PathBuf>,
    #[command(flatten)]
    metric: MetricArgs,
    /// Uniform ratio for every prunable matrix.
    #[arg(long, conflicts_with = "profile", required_unless_present = "profile")]
    sparsity: Option<f64>,
    /// Sparsity profile document.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct KvArgs {
    /// Bandwidth profile document; all layers 16-bit when omitted.
    #[arg(long, conflicts_with = "bits")]
    kv_bits: Option<PathBuf>,
    /// Per-layer bit-widths, e.g. `8,8,6,6`.
    #[arg(long, value_delimiter = ',')]
    bits: Option<Vec<u8>>,
}

impl KvArgs {
    fn resolve(&self, n_layers: usize) -> Result<KvCacheConfig> {
        match (&self.kv_bits, &self.bits) {
            (Some(path), _) => make_kv_config(&BandwidthProfile::load(path)?, n_layers),
            (None, Some(bits)) => make_kv_config(&BandwidthProfile { bits: bits.clone() }, n_layers),
            (None, None) => Ok(KvCacheConfig::passthrough(n_layers)),
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Window length; defaults to the model's max_seq.
    #[arg(long)]
    ctx: Option<usize>,
    #[command(flatten)]
    kv: KvArgs,
}

#[derive(Args)]
struct SearchCommon {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ctx: Option<usize>,
    /// Best-profile output document.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    ledger: PathBuf,
    /// Record wall-clock seconds per trial (makes the ledger non-reproducible).
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct SearchSparsityArgs {
    #[command(flatten)]
    common: SearchCommon,
    #[arg(long)]
    calib: Option<PathBuf>,
    #[command(flatten)]
    metric: MetricArgs,
    #[arg(long, default_value_t = 0.5)]
    overall: f64,
    #[command(flatten)]
    kv: KvArgs,
}

#[derive(Args)]
struct SearchBandwidthArgs {
    #[command(flatten)]
    common: SearchCommon,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    ledger: PathBuf,
    /// Directory for `trials.csv` and `layers.csv`; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_metric(s: &str) -> std::result::Result<MetricKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        })
    }
}

fn require_out_dir(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "parent directory does not exist"),
        }),
        _ => Ok(()),
    }
}

fn read_corpus(path: &Path) -> Result<Vec<u32>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(tokenize_bytes(&text))
}

fn load_calib(path: Option<&Path>, model: &Checkpoint, metric: MetricKind) -> Result<Option<CalibrationStats>> {
    let Some(path) = path else {
        if metric.needs_activations() {
            return Err(Error::InvalidInput(format!("--metric {metric} requires --calib")));
        }
        return Ok(None);
    };
    let (cfg, stats) = CalibrationStats::load(path)?;
    if cfg != model.config {
        return Err(Error::InvalidInput(format!(
            "{} was recorded for a different model architecture",
            path.display()
        )));
    }
    Ok(Some(stats))
}

fn effective_seed(seed: Option<u64>) -> u64 {
    let seed = seed.unwrap_or(DEFAULT_SEED);
    eprintln!("seed: {seed}");
    seed
}

fn print_sparsity(model: &Checkpoint) {
    let report = measure_sparsity(model);
    for (layer, ratio) in report.per_layer() {
        println!("layer {layer}: {ratio:.4}");
    }
    println!("overall: {:.4}", report.overall());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenModel(a) => {
            require_out_dir(&a.out)?;
            let seed = effective_seed(a.seed);
            let config = ModelConfig::new(a.layers, a.d_model, a.heads, a.d_ff, a.max_seq);
            generate_toy_model(config, seed)?.save(&a.out)?;
        }
        Command::Calibrate(a) => {
            require_file(&a.model)?;
            require_file(&a.corpus)?;
            require_out_dir(&a.out)?;
            let model = Checkpoint::load(&a.model)?;
            let corpus = read_corpus(&a.corpus)?;
            let stats = calibrate(&model, &corpus, a.samples)?;
            stats.save(&model.config, &a.out)?;
        }
        Command::Prune(a) => {
            require_file(&a.model)?;
            require_out_dir(&a.out)?;
            let model = Checkpoint::load(&a.model)?;
            let profile = match (&a.profile, a.sparsity) {
                (Some(p), _) => SparsityProfile::load(p)?,
                (None, Some(r)) => SparsityProfile::uniform(model.config.n_layers, r),
                (None, None) => unreachable!("clap requires one of --sparsity/--profile"),
            };
            let calib = load_calib(a.calib.as_deref(), &model, a.metric.metric)?;
            let (pruned, _) =
                apply_profile(&model, &profile, calib.as_ref(), a.metric.metric, a.metric.granularity())?;
            pruned.save(&a.out)?;
            print_sparsity(&pruned);
        }
        Command::Eval(a) => {
            require_file(&a.model)?;
            require_file(&a.corpus)?;
            let model = Checkpoint::load(&a.model)?;
            let corpus = read_corpus(&a.corpus)?;
            let kv = a.kv.resolve(model.config.n_layers)?;
            let ctx = a.ctx.unwrap_or(model.config.max_seq);
            println!("{:.4}", perplexity(&model, &corpus, &kv, ctx)?);
        }
        Command::SearchSparsity(a) => {
            let c = &a.common;
            let (model, corpus, opts, ctx) = prepare_search(c)?;
            let calib = load_calib(a.calib.as_deref(), &model, a.metric.metric)?;
            let kv = a.kv.resolve(model.config.n_layers)?;
            let space = SearchSpace::sparsity(&model.config, a.overall)?;
            let objective = Objective::Sparsity {
                calib: calib.as_ref(),
                metric: a.metric.metric,
                granularity: a.metric.granularity(),
                kv,
            };
            let outcome = run_search(&model, &corpus, ctx, &space, &objective, &opts)?;
            outcome.sparsity_profile(a.overall).save(&c.out)?;
            finish_search(c, &outcome)?;
        }
        Command::SearchBandwidth(a) => {
            let c = &a.common;
            let (model, corpus, opts, ctx) = prepare_search(c)?;
            let space = SearchSpace::bandwidth(model.config.n_layers)?;
            let outcome = run_search(&model, &corpus, ctx, &space, &Objective::Bandwidth, &opts)?;
            outcome.bandwidth_profile().save(&c.out)?;
            finish_search(c, &outcome)?;
        }
        Command::Report(a) => {
            require_file(&a.ledger)?;
            let report = emit_report(&a.ledger)?;
            let (trials, layers) = (report.trials_csv()?, report.layers_csv()?);
            match a.out {
                Some(dir) => {
                    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    for (name, body) in [("trials.csv", trials), ("layers.csv", layers)] {
                        let p = dir.join(name);
                        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
                    }
                }
                None => print!("{trials}\n{layers}"),
            }
        }
    }
    Ok(())
}

fn prepare_search(c: &SearchCommon) -> Result<(Checkpoint, Vec<u32>, SearchOptions, usize)> {
    require_file(&c.model)?;
    require_file(&c.corpus)?;
    require_out_dir(&c.out)?;
    require_out_dir(&c.ledger)?;
    let seed = effective_seed(c.seed);
    let model = Checkpoint::load(&c.model)?;
    let corpus = read_corpus(&c.corpus)?;
    let mut opts = SearchOptions::new(c.trials, seed);
    opts.record_timing = c.timings;
    let ctx = c.ctx.unwrap_or(model.config.max_seq);
    Ok((model, corpus, opts, ctx))
}

fn finish_search(c: &SearchCommon, outcome: &SearchOutcome) -> Result<()> {
    save_ledger(&c.ledger, &outcome.ledger)?;
    println!("best ppl: {:.4}", outcome.best_ppl);
    println!(
        "evaluated {} of {} trials",
        outcome.ledger.iter().filter(|r| r.ppl.is_some()).count(),
        outcome.ledger.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
