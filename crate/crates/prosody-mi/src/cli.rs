//! Command-line front end tying the pipeline together.
//!
//! Seven subcommands cover the workflow end to end: `synth` (generate a
//! corpus with a known-MI oracle), `extract` (audio/f0 → prosody-vector
//! cache), `fit-kde` and `fit-mdn` (standalone density models), `estimate`
//! (MI results CSV), `trend-test` (ordered trend over grouped results),
//! and `report` (vector-graphic charts plus a text summary).
//!
//! Configuration precedence is flags > config file > defaults; every run
//! dumps its effective configuration as `<command>_config.json` whose
//! 16-hex-digit hash, together with the master seed, also lands in each
//! artifact the run writes. Re-running with an identical configuration
//! reproduces output files byte for byte.
//!
//! Failures map to stable exit codes so callers can tell them apart:
//! 2 for usage errors (unknown flags, invalid option values, missing
//! conditioning sources), 3 for I/O problems (missing inputs, unwritable
//! outputs), 4 for malformed file content (parse errors, dimension or
//! context-kind mismatches, empty results), and 5 for numeric failures
//! (degenerate data, diverged training). Exit code 0 means every requested
//! artifact was written.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::audio::AudioError;
use crate::corpus::{
    load_manifest_with, save_manifest, Corpus, CorpusError, ManifestOptions, ProsodicType,
};
use crate::embeddings::{
    load_context_store, load_static_vectors, save_static_vectors, ContextKind, EmbeddingError,
};
use crate::estimator::{
    jonckheere_test, read_results_csv, write_results_csv, EstimatorError, ResultRow,
};
use crate::kde::{fit_conditional, ConditionalKdeConfig, KdeError, KdeMode};
use crate::mdn::{train_mdn, write_training_log, MdnError, MdnSample, TrainConfig};
use crate::pipeline::{
    assemble_dataset, estimate_corpus, extract_corpus, split_items_by_utterance,
    ConditioningSource, EstimateInput, EstimateOptions, ExtractOptions, Method, PipelineError,
};
use crate::pitch::{Normalization, PitchError, ProsodyCache};
use crate::report::{write_report, ReportError};
use crate::synth::{generate, leak_for_target_mi, true_mi, SynthError, SynthSpec};

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

/// A failed run, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Invalid flags or option values (exit 2).
    Usage(String),
    /// Missing inputs or unwritable outputs (exit 3).
    Io(String),
    /// Malformed or inconsistent file content (exit 4).
    Content(String),
    /// Numeric failure or degenerate data (exit 5).
    Compute(String),
}

impl CliError {
    /// Process exit code for this failure class.
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Content(_) => 4,
            CliError::Compute(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m)
            | CliError::Io(m)
            | CliError::Content(m)
            | CliError::Compute(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(_) => CliError::Io(e.to_string()),
            CorpusError::BadTrainFrac(_) | CorpusError::SampleTooLarge { .. } => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Content(e.to_string()),
        }
    }
}

impl From<PitchError> for CliError {
    fn from(e: PitchError) -> Self {
        match e {
            PitchError::Io(_) => CliError::Io(e.to_string()),
            PitchError::TrackParse { .. }
            | PitchError::CacheParse { .. }
            | PitchError::UnwritableId(_) => CliError::Content(e.to_string()),
            PitchError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<AudioError> for CliError {
    fn from(e: AudioError) -> Self {
        match e {
            AudioError::Read { .. } | AudioError::Write { .. } => CliError::Io(e.to_string()),
            AudioError::UnsupportedFormat { .. } => CliError::Content(e.to_string()),
            AudioError::EmptySignal => CliError::Compute(e.to_string()),
        }
    }
}

impl From<KdeError> for CliError {
    fn from(e: KdeError) -> Self {
        match e {
            KdeError::Io(_) => CliError::Io(e.to_string()),
            KdeError::ModelFile { .. } => CliError::Content(e.to_string()),
            KdeError::BadConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<MdnError> for CliError {
    fn from(e: MdnError) -> Self {
        match e {
            MdnError::Io(_) => CliError::Io(e.to_string()),
            MdnError::Checkpoint { .. } => CliError::Content(e.to_string()),
            MdnError::BadConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::Io(_) => CliError::Io(e.to_string()),
            EstimatorError::ResultsFile { .. } => CliError::Content(e.to_string()),
            EstimatorError::BadConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Content(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::BadSpec(_) => CliError::Content(e.to_string()),
            SynthError::TooFewSamples { .. } | SynthError::TargetOutOfRange { .. } => {
                CliError::Usage(e.to_string())
            }
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Io { .. } => CliError::Io(e.to_string()),
            ReportError::NoRows => CliError::Content(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::BadConfig(_) | PipelineError::MissingConditioning { .. } => {
                CliError::Usage(e.to_string())
            }
            PipelineError::ContextKindMismatch { .. } => CliError::Content(e.to_string()),
            PipelineError::NoUsableTokens { .. } => CliError::Compute(e.to_string()),
            PipelineError::Corpus(inner) => inner.into(),
            PipelineError::Pitch(inner) => inner.into(),
            PipelineError::Audio(inner) => inner.into(),
            PipelineError::Kde(inner) => inner.into(),
            PipelineError::Mdn(inner) => inner.into(),
            PipelineError::Estimator(inner) => inner.into(),
            PipelineError::Embedding(inner) => inner.into(),
            PipelineError::Io(inner) => CliError::Io(inner.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// Argument grammar
// ---------------------------------------------------------------------------

fn parse_method(s: &str) -> Result<Method, String> {
    Method::from_str(s)
}

fn parse_normalization(s: &str) -> Result<Normalization, String> {
    Normalization::from_str(s)
}

fn parse_prosodic_type(s: &str) -> Result<ProsodicType, String> {
    ProsodicType::from_str(s)
}

fn parse_kde_mode(s: &str) -> Result<KdeMode, String> {
    match s {
        "kde-all" | "all" => Ok(KdeMode::All),
        "kde-split" | "split" => Ok(KdeMode::Split),
        other => Err(format!(
            "unknown protocol {other:?} (expected kde-all or kde-split)"
        )),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "prosody-mi",
    version,
    about = "Estimate mutual information between word identity and word-level pitch contours."
)]
struct Cli {
    /// Directory artifacts are written to.
    #[arg(long, global = true, env = "PROSODY_MI_OUT", default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic tone corpus with a Monte Carlo ground-truth MI.
    Synth(SynthArgs),
    /// Turn referenced audio or f0 tracks into word-level pitch vectors.
    Extract(ExtractArgs),
    /// Fit a per-word KDE with occurrence-threshold backoff and save it.
    FitKde(FitKdeArgs),
    /// Train a mixture density network on conditioning vectors and save it.
    FitMdn(FitMdnArgs),
    /// Estimate MI between word identity and pitch contours; write CSV rows.
    Estimate(EstimateArgs),
    /// Ordered trend test over per-language MI grouped by prosodic type.
    TrendTest(TrendTestArgs),
    /// Render the MI bar chart, entropy scatter, and text summary from results.
    Report(ReportArgs),
}

#[derive(Debug, clap::Args)]
struct SynthArgs {
    /// Generator specification JSON; a built-in default is used when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Tune the tone-leak probability so true MI hits this value (nats).
    #[arg(long)]
    target_mi: Option<f64>,
    /// Override the specification's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the specification's language tag.
    #[arg(long)]
    language: Option<String>,
    /// Override the specification's prosodic type.
    #[arg(long, value_parser = parse_prosodic_type)]
    prosodic_type: Option<ProsodicType>,
    /// Monte Carlo draws for the ground-truth oracle (and leak tuning).
    #[arg(long, default_value_t = 200_000)]
    oracle_samples: usize,
}

#[derive(Debug, clap::Args)]
struct ExtractArgs {
    /// Corpus manifest (JSON lines).
    #[arg(long)]
    manifest: PathBuf,
    /// Directory audio/f0 references resolve against (default: the manifest's directory).
    #[arg(long)]
    root: Option<PathBuf>,
    /// Extraction options JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Word-curve scale: log-mean (speaker-normalized log-f0) or raw (Hz).
    #[arg(long, value_parser = parse_normalization)]
    normalize: Option<Normalization>,
    /// Octaves from the utterance median beyond which voiced frames are dropped.
    #[arg(long)]
    outlier_octaves: Option<f64>,
    /// Lowest f0 candidate in Hz.
    #[arg(long)]
    f0_min: Option<f64>,
    /// Highest f0 candidate in Hz.
    #[arg(long)]
    f0_max: Option<f64>,
}

#[derive(Debug, clap::Args)]
struct FitKdeArgs {
    /// Corpus manifest (JSON lines).
    #[arg(long)]
    manifest: PathBuf,
    /// Prosody-vector cache produced by `extract` or `synth`.
    #[arg(long)]
    cache: PathBuf,
    /// Fitting protocol: kde-all (fit on everything) or kde-split.
    #[arg(long, default_value = "kde-split", value_parser = parse_kde_mode)]
    method: KdeMode,
    /// Occurrence threshold below which words share the unconditional density.
    #[arg(long, default_value_t = 20)]
    lambda: usize,
    /// Fitting fraction under the split protocol.
    #[arg(long, default_value_t = 0.7)]
    split: f64,
    /// Comma-separated fixed bandwidth candidates added to the two rules of thumb.
    #[arg(long, value_delimiter = ',')]
    bandwidths: Option<Vec<f64>>,
    /// Cross-validation folds for bandwidth selection.
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Select a bandwidth per word instead of sharing the pooled one.
    #[arg(long)]
    per_word_bandwidth: bool,
    /// Skip tokens whose word exceeds this subword count.
    #[arg(long)]
    max_tokens_per_word: Option<u32>,
    /// Master seed for the split and bandwidth cross-validation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, clap::Args)]
struct FitMdnArgs {
    /// Corpus manifest (JSON lines).
    #[arg(long)]
    manifest: PathBuf,
    /// Prosody-vector cache produced by `extract` or `synth`.
    #[arg(long)]
    cache: PathBuf,
    /// Static word vectors, one token per line.
    #[arg(long, conflicts_with = "context_store")]
    embeddings: Option<PathBuf>,
    /// Contextual vectors keyed by (utterance, word index).
    #[arg(long)]
    context_store: Option<PathBuf>,
    /// Expect left-context (autoregressive) vectors in the context store.
    #[arg(long, requires = "context_store")]
    left_context: bool,
    /// Trainer configuration JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mixture components K.
    #[arg(long)]
    kernels: Option<usize>,
    #[arg(long)]
    hidden_units: Option<usize>,
    #[arg(long)]
    hidden_layers: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Epochs without validation improvement before training stops.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Fraction of utterances used for fitting; the rest validate.
    #[arg(long, default_value_t = 0.7)]
    split: f64,
    /// Drop out-of-vocabulary tokens instead of zero-filling their vectors.
    #[arg(long)]
    drop_oov: bool,
    /// Skip tokens whose word exceeds this subword count.
    #[arg(long)]
    max_tokens_per_word: Option<u32>,
    /// Override the trainer's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
struct EstimateArgs {
    /// Corpus manifest (JSON lines).
    #[arg(long)]
    manifest: PathBuf,
    /// Prosody-vector cache produced by `extract` or `synth`.
    #[arg(long)]
    cache: PathBuf,
    /// Static word vectors for the static-embedding network estimator.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Contextual vectors for the context-conditioned network estimators.
    #[arg(long)]
    context_store: Option<PathBuf>,
    /// Estimation options JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Estimator to run; repeat the flag to run several in one pass.
    #[arg(long, value_parser = parse_method)]
    method: Vec<Method>,
    /// Occurrence threshold below which words back off to the unconditional density.
    #[arg(long)]
    lambda: Option<usize>,
    /// Mixture components K for the network estimators.
    #[arg(long)]
    kernels: Option<usize>,
    /// Cross-validation folds: estimation folds for network methods,
    /// bandwidth-selection folds for KDE methods.
    #[arg(long)]
    folds: Option<usize>,
    /// Bandwidth-selection folds (takes precedence over --folds).
    #[arg(long)]
    kde_folds: Option<usize>,
    /// Fitting fraction for held-out protocols.
    #[arg(long)]
    split: Option<f64>,
    /// Comma-separated fixed bandwidth candidates added to the two rules of thumb.
    #[arg(long, value_delimiter = ',')]
    bandwidths: Option<Vec<f64>>,
    /// Select a KDE bandwidth per word instead of sharing the pooled one.
    #[arg(long)]
    per_word_bandwidth: bool,
    /// Skip tokens whose word exceeds this subword count.
    #[arg(long)]
    max_tokens_per_word: Option<u32>,
    /// Drop out-of-vocabulary tokens instead of zero-filling their vectors.
    #[arg(long)]
    drop_oov: bool,
    /// Score in the raw vector space instead of standardizing on the fitting portion.
    #[arg(long)]
    raw_vectors: bool,
    /// Bootstrap resamples behind the uncertainty estimates.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Master seed for splits, resampling, and training.
    #[arg(long)]
    seed: Option<u64>,
    /// Append to an existing results file instead of replacing it.
    #[arg(long)]
    append: bool,
}

#[derive(Debug, clap::Args)]
struct TrendTestArgs {
    /// Results CSV produced by `estimate`.
    #[arg(long)]
    results: PathBuf,
    /// Permutations behind the p-value.
    #[arg(long, default_value_t = 10_000)]
    permutations: usize,
    /// Seed for the permutation draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, clap::Args)]
struct ReportArgs {
    /// Results CSV produced by `estimate`.
    #[arg(long)]
    results: PathBuf,
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Parses `argv` and runs the selected subcommand, returning the process
/// exit code: 0 on success, 2 usage, 3 I/O, 4 content, 5 numeric.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = err.print();
            return code;
        }
    };
    let out = cli.out;
    let result = match cli.command {
        Command::Synth(args) => run_synth(&out, args),
        Command::Extract(args) => run_extract(&out, args),
        Command::FitKde(args) => run_fit_kde(&out, args),
        Command::FitMdn(args) => run_fit_mdn(&out, args),
        Command::Estimate(args) => run_estimate(&out, args),
        Command::TrendTest(args) => run_trend_test(&out, args),
        Command::Report(args) => run_report(&out, args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.code()
        }
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Io(format!(
            "missing input file: {}",
            path.display()
        )))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    require_file(path)?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Content(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Content(format!("{}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// First 16 hex digits of the SHA-256 of the value's canonical JSON.
fn hash_json<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("config values always serialize");
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn ensure_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)
        .map_err(|e| CliError::Io(format!("cannot create output directory {}: {e}", out.display())))
}

/// Dumps the effective configuration as `<command>_config.json` and returns
/// its hash; the same hash is embedded in the run's other artifacts.
fn dump_config<T: Serialize>(
    out: &Path,
    command: &str,
    seed: Option<u64>,
    config: &T,
) -> Result<String, CliError> {
    let config_hash = hash_json(config);
    let dump = json!({
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "config": config,
    });
    let name = format!("{}_config.json", command.replace('-', "_"));
    write_json(&out.join(name), &dump)?;
    Ok(config_hash)
}

fn load_corpus(path: &Path, require_pitch_source: bool) -> Result<Corpus, CliError> {
    require_file(path)?;
    let options = ManifestOptions {
        require_pitch_source,
        ..ManifestOptions::default()
    };
    Ok(load_manifest_with(path, &options)?)
}

fn load_cache(path: &Path) -> Result<ProsodyCache, CliError> {
    require_file(path)?;
    Ok(ProsodyCache::load(path)?)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn run_synth(out: &Path, args: SynthArgs) -> Result<(), CliError> {
    let mut spec: SynthSpec = match &args.spec {
        Some(path) => read_json(path)?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(language) = args.language {
        spec.language = language;
    }
    if let Some(prosodic_type) = args.prosodic_type {
        spec.prosodic_type = prosodic_type;
    }
    if let Some(target) = args.target_mi {
        spec.leak = leak_for_target_mi(&spec, target, args.oracle_samples, 1e-3)?;
    }
    let oracle = true_mi(&spec, args.oracle_samples)?;
    let synth = generate(&spec)?;

    ensure_out(out)?;
    let config_hash = dump_config(out, "synth", Some(spec.seed), &spec)?;
    save_manifest(&synth.corpus, &out.join("corpus.jsonl"))?;
    synth.cache.save(&out.join("cache.json"))?;
    save_static_vectors(&synth.embeddings, &out.join("embeddings.vec"))?;
    write_json(
        &out.join("oracle.json"),
        &json!({
            "config_hash": config_hash,
            "seed": spec.seed,
            "mi_nats": oracle.nats,
            "stderr": oracle.stderr,
            "n_mc": args.oracle_samples,
            "leak": spec.leak,
        }),
    )?;
    println!(
        "synth: {} utterances, {} tokens, true MI {:.4} nats (stderr {:.4}) -> {}",
        synth.corpus.utterances.len(),
        synth.corpus.n_tokens(),
        oracle.nats,
        oracle.stderr,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

fn run_extract(out: &Path, args: ExtractArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&args.manifest, false)?;
    let mut options: ExtractOptions = match &args.config {
        Some(path) => read_json(path)?,
        None => ExtractOptions::default(),
    };
    if let Some(normalization) = args.normalize {
        options.preprocess.normalization = normalization;
    }
    if let Some(octaves) = args.outlier_octaves {
        options.preprocess.outlier_octaves = octaves;
    }
    if let Some(f0_min) = args.f0_min {
        options.f0.f0_min = f0_min;
    }
    if let Some(f0_max) = args.f0_max {
        options.f0.f0_max = f0_max;
    }
    let root = match &args.root {
        Some(dir) => dir.clone(),
        None => args
            .manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };

    let (cache, report) = extract_corpus(&corpus, &root, &options)?;

    ensure_out(out)?;
    let config_hash = dump_config(out, "extract", None, &options)?;
    cache.save(&out.join("cache.json"))?;
    write_json(
        &out.join("extract_report.json"),
        &json!({
            "config_hash": config_hash,
            "cached": report.cached,
            "skipped": report.skipped,
        }),
    )?;
    println!(
        "extract: cached {} word vectors, skipped {} -> {}",
        report.cached,
        report.skipped.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit-kde
// ---------------------------------------------------------------------------

fn run_fit_kde(out: &Path, args: FitKdeArgs) -> Result<(), CliError> {
    let corpus = load_corpus(&args.manifest, false)?;
    let cache = load_cache(&args.cache)?;
    let dataset = assemble_dataset(
        &corpus,
        &cache,
        ConditioningSource::None,
        false,
        args.max_tokens_per_word,
    )?;
    let pairs: Vec<(String, crate::pitch::ProsodyVector)> = dataset
        .items
        .iter()
        .map(|item| (item.form.clone(), item.vector))
        .collect();

    let config = ConditionalKdeConfig {
        lambda: args.lambda,
        mode: args.method,
        train_frac: args.split,
        seed: args.seed,
        fixed_bandwidths: args
            .bandwidths
            .clone()
            .unwrap_or_else(|| crate::kde::DEFAULT_FIXED_BANDWIDTHS.to_vec()),
        cv_folds: args.folds,
        per_word_bandwidth: args.per_word_bandwidth,
    };
    let fit = fit_conditional(&pairs, &config)?;

    ensure_out(out)?;
    dump_config(
        out,
        "fit-kde",
        Some(args.seed),
        &json!({
            "kde": config,
            "max_tokens_per_word": args.max_tokens_per_word,
            "dataset": dataset.stats,
        }),
    )?;
    fit.model.save(&out.join("kde_model.json"))?;
    println!(
        "fit-kde: {} dedicated word models (lambda {}), fallback on {} vectors, bandwidth {:.4} -> {}",
        fit.model.dedicated_words().count(),
        fit.model.lambda(),
        fit.model.fallback().n_points(),
        fit.model.fallback().bandwidth(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit-mdn
// ---------------------------------------------------------------------------

fn run_fit_mdn(out: &Path, args: FitMdnArgs) -> Result<(), CliError> {
    let mut corpus = load_corpus(&args.manifest, false)?;
    let cache = load_cache(&args.cache)?;

    let mut config: TrainConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.kernels {
        config.kernels = v;
    }
    if let Some(v) = args.hidden_units {
        config.hidden_units = v;
    }
    if let Some(v) = args.hidden_layers {
        config.hidden_layers = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = args.dropout {
        config.dropout = v;
    }
    if let Some(v) = args.epochs {
        config.max_epochs = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.patience {
        config.early_stop_patience = v;
    }
    if let Some(v) = args.weight_decay {
        config.weight_decay = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }

    let static_load = match &args.embeddings {
        Some(path) => {
            require_file(path)?;
            Some(load_static_vectors(path)?)
        }
        None => None,
    };
    let context_load = match &args.context_store {
        Some(path) => {
            require_file(path)?;
            let kind = if args.left_context {
                ContextKind::Autoregressive
            } else {
                ContextKind::Bidirectional
            };
            Some(load_context_store(path, &mut corpus, kind)?)
        }
        None => None,
    };
    let conditioning = match (&static_load, &context_load) {
        (Some(load), None) => ConditioningSource::Static(&load.table),
        (None, Some(load)) => ConditioningSource::Contextual(&load.store),
        (None, None) => {
            return Err(CliError::Usage(
                "fit-mdn needs a conditioning source: --embeddings or --context-store".to_string(),
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap rejects conflicting sources"),
    };

    let dataset = assemble_dataset(
        &corpus,
        &cache,
        conditioning,
        args.drop_oov,
        args.max_tokens_per_word,
    )?;
    let (fit_items, val_items) = split_items_by_utterance(&dataset.items, args.split, config.seed)?;
    let to_samples = |items: &[crate::pipeline::TokenInstance]| -> Vec<MdnSample> {
        items
            .iter()
            .filter_map(|item| item.embedding.clone().map(|x| (x, item.vector)))
            .collect()
    };
    let train: Vec<MdnSample> = to_samples(&fit_items);
    let validation: Vec<MdnSample> = to_samples(&val_items);

    let trained = train_mdn(&train, &config, &validation)?;

    ensure_out(out)?;
    dump_config(
        out,
        "fit-mdn",
        Some(config.seed),
        &json!({
            "trainer": config,
            "split": args.split,
            "drop_oov": args.drop_oov,
            "max_tokens_per_word": args.max_tokens_per_word,
            "dataset": dataset.stats,
        }),
    )?;
    trained.model.save(&out.join("mdn_model.json"))?;
    write_training_log(&out.join("training_log.csv"), &trained.log)?;
    println!(
        "fit-mdn: {} train / {} validation samples, best val NLL {:.4} at epoch {} -> {}",
        train.len(),
        validation.len(),
        trained.best_val_nll,
        trained.best_epoch,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

fn run_estimate(out: &Path, args: EstimateArgs) -> Result<(), CliError> {
    let mut corpus = load_corpus(&args.manifest, false)?;
    let cache = load_cache(&args.cache)?;

    let mut options: EstimateOptions = match &args.config {
        Some(path) => read_json(path)?,
        None => EstimateOptions::default(),
    };
    if let Some(v) = args.lambda {
        options.lambda = v;
    }
    if let Some(v) = args.kernels {
        options.mdn.kernels = v;
    }
    if let Some(v) = args.split {
        options.train_frac = v;
    }
    if let Some(v) = &args.bandwidths {
        options.kde_bandwidths = v.clone();
    }
    options.kde_per_word_bandwidth |= args.per_word_bandwidth;
    if let Some(v) = args.max_tokens_per_word {
        options.max_tokens_per_word = Some(v);
    }
    options.drop_oov |= args.drop_oov;
    if args.raw_vectors {
        options.standardize = false;
    }
    if let Some(v) = args.bootstrap {
        options.bootstrap_resamples = v;
    }
    if let Some(v) = args.seed {
        options.seed = v;
    }
    if let Some(v) = args.kde_folds {
        options.kde_cv_folds = v;
    }

    let mut methods: Vec<Method> = Vec::new();
    for &method in if args.method.is_empty() {
        std::slice::from_ref(&options.method)
    } else {
        args.method.as_slice()
    } {
        if !methods.contains(&method) {
            methods.push(method);
        }
    }

    // One options value per method; --folds lands on the fold knob the
    // method actually reads, without clobbering an explicit --kde-folds.
    let runs: Vec<EstimateOptions> = methods
        .iter()
        .map(|&method| {
            let mut per_method = options.clone();
            per_method.method = method;
            if let Some(folds) = args.folds {
                if method.uses_network() {
                    per_method.cv_folds = folds;
                } else if args.kde_folds.is_none() {
                    per_method.kde_cv_folds = folds;
                }
            }
            per_method
        })
        .collect();

    let static_load = match &args.embeddings {
        Some(path) => {
            require_file(path)?;
            Some(load_static_vectors(path)?)
        }
        None => None,
    };
    let context_load = match &args.context_store {
        Some(path) => {
            require_file(path)?;
            let kind = methods
                .iter()
                .find_map(|m| m.context_kind())
                .unwrap_or(ContextKind::Bidirectional);
            Some(load_context_store(path, &mut corpus, kind)?)
        }
        None => None,
    };

    let input = EstimateInput {
        corpus: &corpus,
        cache: &cache,
        static_vectors: static_load.as_ref().map(|load| &load.table),
        context_store: context_load.as_ref().map(|load| &load.store),
    };

    // Methods are independent jobs; results are collected in method order,
    // so the parallel schedule never shows in the output.
    let outcomes: Vec<Result<crate::pipeline::EstimateOutcome, PipelineError>> = runs
        .par_iter()
        .map(|per_method| estimate_corpus(&input, per_method))
        .collect();

    ensure_out(out)?;
    let results_path = out.join("results.csv");
    let mut rows: Vec<ResultRow> = if args.append && results_path.is_file() {
        read_results_csv(&results_path)?
    } else {
        Vec::new()
    };

    let mut run_records = Vec::new();
    for (outcome, per_method) in outcomes.into_iter().zip(&runs) {
        let outcome = outcome?;
        run_records.push(json!({
            "method": per_method.method,
            "config_hash": outcome.config_hash,
            "options": per_method,
            "dataset": outcome.stats,
        }));
        println!(
            "estimate[{}]: MI {:.4} nats (stderr {:.4}), H {:.4}, H|W {:.4}, {} tokens",
            per_method.method.label(),
            outcome.estimate.mi_nats,
            outcome.estimate.stderr,
            outcome.estimate.h_unconditional.nats,
            outcome.estimate.h_conditional.nats,
            outcome.estimate.h_unconditional.n,
        );
        rows.push(ResultRow::from_estimate(
            &outcome.estimate,
            per_method.seed,
            &outcome.config_hash,
        ));
    }

    let run_hash = hash_json(&runs);
    let dump = json!({
        "command": "estimate",
        "config_hash": run_hash,
        "seed": options.seed,
        "runs": run_records,
    });
    write_json(&out.join("estimate_config.json"), &dump)?;
    write_results_csv(&results_path, &rows)?;
    println!(
        "estimate: wrote {} rows -> {}",
        rows.len(),
        results_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// trend-test
// ---------------------------------------------------------------------------

fn run_trend_test(out: &Path, args: TrendTestArgs) -> Result<(), CliError> {
    require_file(&args.results)?;
    let rows = read_results_csv(&args.results)?;

    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for prosodic_type in ProsodicType::ORDERED {
        let values: Vec<f64> = rows
            .iter()
            .filter(|row| row.prosodic_type == prosodic_type)
            .map(|row| row.mi_nats)
            .collect();
        if !values.is_empty() {
            groups.push((prosodic_type.label().to_string(), values));
        }
    }
    let group_sizes: Vec<usize> = groups.iter().map(|(_, values)| values.len()).collect();

    let result = jonckheere_test(&groups, args.permutations, args.seed)?;

    ensure_out(out)?;
    let config_hash = dump_config(
        out,
        "trend-test",
        Some(args.seed),
        &json!({
            "results": args.results.display().to_string(),
            "permutations": args.permutations,
            "seed": args.seed,
        }),
    )?;
    write_json(
        &out.join("trend_test.json"),
        &json!({
            "config_hash": config_hash,
            "seed": args.seed,
            "statistic": result.statistic,
            "p_value": result.p_value,
            "n_permutations": result.n_permutations,
            "group_order": result.group_order,
            "group_sizes": group_sizes,
        }),
    )?;
    println!(
        "trend-test: J = {:.1}, p = {:.4} over {} ({} permutations)",
        result.statistic,
        result.p_value,
        result.group_order.join(" < "),
        result.n_permutations,
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn run_report(out: &Path, args: ReportArgs) -> Result<(), CliError> {
    require_file(&args.results)?;
    let rows = read_results_csv(&args.results)?;

    ensure_out(out)?;
    dump_config(
        out,
        "report",
        None,
        &json!({ "results": args.results.display().to_string() }),
    )?;
    let paths = write_report(&rows, out)?;
    println!(
        "report: wrote {}, {}, {}",
        paths.mi_chart.display(),
        paths.entropy_scatter.display(),
        paths.summary.display(),
    );
    Ok(())
}
