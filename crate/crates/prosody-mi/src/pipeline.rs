//! End-to-end estimation: turn a corpus plus its pitch-vector cache (and,
//! for network-based methods, word embeddings) into a labeled
//! mutual-information estimate, and turn referenced audio or f0 tracks
//! into that cache in the first place.
//!
//! The unconditional density is always a kernel density estimate fit on
//! the method's fitting portion; the method tag selects the conditional
//! estimator and the evaluation protocol:
//!
//! | method       | conditional model       | uncertainty               |
//! |--------------|-------------------------|---------------------------|
//! | `KDE-W(all)` | per-word KDE, fit = eval| bootstrap over test items |
//! | `KDE-W(split)`| per-word KDE, 70/30 split| bootstrap over test items|
//! | `MDN-W`      | MDN on static vectors   | spread across CV folds    |
//! | `MDN-W←`     | MDN on left-context vectors | spread across CV folds|
//! | `MDN-W↔`     | MDN on bidirectional vectors| spread across CV folds|
//!
//! Density models see per-dimension standardized targets (moments from the
//! fitting portion only); reported entropies are corrected back to
//! data-space nats by the log-Jacobian of that scaling, which leaves MI
//! unchanged.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::cell::Cell;
use std::collections::BTreeSet;
use std::path::Path;
use thiserror::Error;

use crate::audio::{read_wav_mono, AudioError};
use crate::corpus::{Corpus, CorpusError};
use crate::embeddings::{ContextEmbeddingStore, ContextKind, EmbeddingError, EmbeddingTable};
use crate::estimator::{
    cv_mi, estimate_mi, EstimateLabel, EstimatorError, FoldScore, MiEstimate, UncertaintyConfig,
};
use crate::kde::{
    conditional_log_density, fit_conditional_parts, fit_kde, kde_log_density, rule_bandwidth,
    select_bandwidth_cv, BandwidthRule, ConditionalKdeConfig, KdeError, KdeMode,
    DEFAULT_FIXED_BANDWIDTHS,
};
use crate::math;
use crate::mdn::{dataset_nll, train_mdn, MdnError, MdnSample, TrainConfig};
use crate::pitch::{
    dct4, extract_f0, load_f0_track, preprocess_track, word_curve, F0Config, PitchError,
    PreprocessConfig, ProsodyCache, ProsodyVector, VECTOR_DIM,
};

/// Errors from dataset assembly, extraction, or estimation.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("method {method} needs {needed}")]
    MissingConditioning { method: String, needed: String },
    #[error("method {method} needs {expected:?} context vectors, store holds {got:?}")]
    ContextKindMismatch {
        method: String,
        expected: ContextKind,
        got: ContextKind,
    },
    #[error(
        "no usable tokens: {total} in corpus, {skipped_by_cap} over the subword cap, \
         {missing_pitch} without pitch vectors, {missing_embedding} without context vectors, \
         {dropped_oov} dropped as out-of-vocabulary"
    )]
    NoUsableTokens {
        total: usize,
        skipped_by_cap: usize,
        missing_pitch: usize,
        missing_embedding: usize,
        dropped_oov: usize,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Pitch(#[from] PitchError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Kde(#[from] KdeError),
    #[error(transparent)]
    Mdn(#[from] MdnError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Methods
// ---------------------------------------------------------------------------

/// The five estimation methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Conditional KDE; bandwidth selection, fitting, and evaluation all on
    /// the full dataset.
    KdeAll,
    /// Conditional KDE; fit on an utterance-level split, evaluate held-out.
    KdeSplit,
    /// Mixture density network on static word vectors.
    MdnW,
    /// Mixture density network on left-context token vectors.
    MdnWLeft,
    /// Mixture density network on bidirectional-context token vectors.
    MdnWBi,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::KdeAll,
        Method::KdeSplit,
        Method::MdnW,
        Method::MdnWLeft,
        Method::MdnWBi,
    ];

    /// The method tag recorded in results files.
    pub fn label(&self) -> &'static str {
        match self {
            Method::KdeAll => "KDE-W(all)",
            Method::KdeSplit => "KDE-W(split)",
            Method::MdnW => "MDN-W",
            Method::MdnWLeft => "MDN-W\u{2190}",
            Method::MdnWBi => "MDN-W\u{2194}",
        }
    }

    /// The token accepted on the command line and in config files.
    pub fn cli_token(&self) -> &'static str {
        match self {
            Method::KdeAll => "kde-all",
            Method::KdeSplit => "kde-split",
            Method::MdnW => "mdn-w",
            Method::MdnWLeft => "mdn-w-left",
            Method::MdnWBi => "mdn-w-bi",
        }
    }

    /// Which context variant this method consumes, if any.
    pub fn context_kind(&self) -> Option<ContextKind> {
        match self {
            Method::MdnWLeft => Some(ContextKind::Autoregressive),
            Method::MdnWBi => Some(ContextKind::Bidirectional),
            _ => None,
        }
    }

    /// True for the network-based methods (cross-validated evaluation).
    pub fn uses_network(&self) -> bool {
        matches!(self, Method::MdnW | Method::MdnWLeft | Method::MdnWBi)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.cli_token())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kde-all" => Ok(Method::KdeAll),
            "kde-split" => Ok(Method::KdeSplit),
            "mdn-w" => Ok(Method::MdnW),
            "mdn-w-left" => Ok(Method::MdnWLeft),
            "mdn-w-bi" => Ok(Method::MdnWBi),
            other => Err(format!(
                "unknown method {other:?} (expected kde-all, kde-split, mdn-w, mdn-w-left, or mdn-w-bi)"
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

/// Per-dimension affine scaling `z = (x − mean) / scale` fit on a fitting
/// portion. Dimensions with (near-)zero spread keep scale 1 so constant
/// coefficients pass through unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: [f64; VECTOR_DIM],
    scale: [f64; VECTOR_DIM],
}

impl Standardizer {
    /// The no-op scaling.
    pub fn identity() -> Self {
        Self {
            mean: [0.0; VECTOR_DIM],
            scale: [1.0; VECTOR_DIM],
        }
    }

    /// Fits means and sample standard deviations per dimension.
    pub fn fit(vectors: &[ProsodyVector]) -> Self {
        if vectors.is_empty() {
            return Self::identity();
        }
        let mut mean = [0.0; VECTOR_DIM];
        let mut scale = [1.0; VECTOR_DIM];
        for j in 0..VECTOR_DIM {
            let column: Vec<f64> = vectors.iter().map(|v| v.0[j]).collect();
            mean[j] = math::mean(&column);
            let std = math::sample_std(&column);
            if std > 1e-12 {
                scale[j] = std;
            }
        }
        Self { mean, scale }
    }

    pub fn apply(&self, v: &ProsodyVector) -> ProsodyVector {
        let mut out = [0.0; VECTOR_DIM];
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = (v.0[j] - self.mean[j]) / self.scale[j];
        }
        ProsodyVector(out)
    }

    /// `Σⱼ ln scaleⱼ` — the correction that maps standardized-space
    /// log-densities back to data-space ones (`ln p_X = ln p_Z − Σ ln σ`).
    pub fn log_jacobian(&self) -> f64 {
        self.scale.iter().map(|s| s.ln()).sum()
    }
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

/// One usable token: its word form, pitch vector, and (for network
/// methods) conditioning embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenInstance {
    /// Index of the owning utterance within the corpus.
    pub utterance: usize,
    pub word_index: usize,
    pub form: String,
    pub vector: ProsodyVector,
    pub embedding: Option<Vec<f64>>,
}

/// Where conditioning vectors come from.
#[derive(Clone, Copy)]
pub enum ConditioningSource<'a> {
    /// None needed (word-form-keyed methods).
    None,
    /// Static per-word vectors; out-of-vocabulary forms get a zero vector.
    Static(&'a EmbeddingTable),
    /// Precomputed per-token context vectors; uncovered tokens are excluded.
    Contextual(&'a ContextEmbeddingStore),
}

/// Exclusion accounting from [`assemble_dataset`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total_tokens: usize,
    pub used_tokens: usize,
    /// Tokens over the `max_tokens_per_word` subword cap.
    pub skipped_by_cap: usize,
    /// Tokens with no cached pitch vector (e.g. unvoiced spans).
    pub missing_pitch: usize,
    /// Tokens with no entry in the context store.
    pub missing_embedding: usize,
    /// Tokens whose form is missing from the static table (zero vector used).
    pub oov_zero_vector: usize,
    /// Out-of-vocabulary tokens dropped under the drop policy.
    pub dropped_oov: usize,
}

/// The assembled per-token dataset for one corpus.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub items: Vec<TokenInstance>,
    pub stats: DatasetStats,
}

/// Joins the corpus with its pitch-vector cache and a conditioning source
/// into per-token records, excluding (and counting) tokens that cannot be
/// used. `max_tokens_per_word`, when set, keeps only tokens whose
/// `n_subword_tokens` annotation is at most the cap; original word indices
/// are preserved so cache and store keys stay valid.
pub fn assemble_dataset(
    corpus: &Corpus,
    cache: &ProsodyCache,
    conditioning: ConditioningSource<'_>,
    drop_oov: bool,
    max_tokens_per_word: Option<u32>,
) -> Result<Dataset, PipelineError> {
    let mut stats = DatasetStats {
        total_tokens: corpus.n_tokens(),
        ..DatasetStats::default()
    };
    let mut items = Vec::new();
    for (ui, utt) in corpus.utterances.iter().enumerate() {
        for word in &utt.words {
            if let Some(cap) = max_tokens_per_word {
                match word.n_subword_tokens {
                    None => {
                        return Err(CorpusError::MissingSubwordCount {
                            utterance_id: utt.utterance_id.clone(),
                            word_index: word.index,
                            form: word.form.clone(),
                        }
                        .into());
                    }
                    Some(n) if n > cap => {
                        stats.skipped_by_cap += 1;
                        continue;
                    }
                    Some(_) => {}
                }
            }
            let Some(vector) = cache.get(&utt.utterance_id, word.index) else {
                stats.missing_pitch += 1;
                continue;
            };
            let embedding = match conditioning {
                ConditioningSource::None => None,
                ConditioningSource::Static(table) => {
                    let (v, found) = crate::embeddings::lookup(table, &word.form);
                    if !found {
                        stats.oov_zero_vector += 1;
                        if drop_oov {
                            stats.dropped_oov += 1;
                            continue;
                        }
                    }
                    Some(v)
                }
                ConditioningSource::Contextual(store) => {
                    match store.get(&utt.utterance_id, word.index) {
                        Some(entry) => Some(entry.vector.clone()),
                        None => {
                            stats.missing_embedding += 1;
                            continue;
                        }
                    }
                }
            };
            items.push(TokenInstance {
                utterance: ui,
                word_index: word.index,
                form: word.form.clone(),
                vector: *vector,
                embedding,
            });
        }
    }
    if items.is_empty() {
        return Err(PipelineError::NoUsableTokens {
            total: stats.total_tokens,
            skipped_by_cap: stats.skipped_by_cap,
            missing_pitch: stats.missing_pitch,
            missing_embedding: stats.missing_embedding,
            dropped_oov: stats.dropped_oov,
        });
    }
    stats.used_tokens = items.len();
    Ok(Dataset { items, stats })
}

// ---------------------------------------------------------------------------
// Estimation options
// ---------------------------------------------------------------------------

/// Fully resolved settings for one estimation run. Serializes
/// deterministically; [`config_hash`] fingerprints the serialized form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateOptions {
    pub method: Method,
    /// Words occurring fewer than this many times in the fitting portion
    /// back off to the unconditional density (KDE methods).
    pub lambda: usize,
    /// Fitting fraction for the split KDE protocol and for carving an
    /// early-stopping validation set out of network training folds.
    pub train_frac: f64,
    /// Cross-validation folds for network methods.
    pub cv_folds: usize,
    /// Folds for KDE bandwidth selection.
    pub kde_cv_folds: usize,
    /// Fixed bandwidth candidates joined with the two closed-form rules.
    pub kde_bandwidths: Vec<f64>,
    /// Give each per-word KDE its own cross-validated bandwidth instead of
    /// reusing the pooled one. Sharper when words are frequent; unstable
    /// when per-word counts sit near the backoff threshold.
    pub kde_per_word_bandwidth: bool,
    /// Network training hyperparameters (`kernels` holds K).
    pub mdn: TrainConfig,
    pub bootstrap_resamples: usize,
    /// Keep only tokens with at most this many subword tokens.
    pub max_tokens_per_word: Option<u32>,
    /// Drop out-of-vocabulary tokens instead of feeding zero vectors.
    pub drop_oov: bool,
    /// Standardize pitch vectors per dimension before density fitting
    /// (entropies are corrected back to data-space nats).
    pub standardize: bool,
    pub seed: u64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            method: Method::KdeSplit,
            lambda: 20,
            train_frac: 0.7,
            cv_folds: 5,
            kde_cv_folds: 10,
            kde_bandwidths: DEFAULT_FIXED_BANDWIDTHS.to_vec(),
            kde_per_word_bandwidth: false,
            mdn: TrainConfig::default(),
            bootstrap_resamples: 1000,
            max_tokens_per_word: None,
            drop_oov: false,
            standardize: true,
            seed: 0,
        }
    }
}

impl EstimateOptions {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.lambda < 1 {
            return Err(PipelineError::BadConfig(format!(
                "lambda must be at least 1, got {}",
                self.lambda
            )));
        }
        if !(self.train_frac.is_finite() && self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(PipelineError::BadConfig(format!(
                "train_frac must lie strictly inside (0, 1), got {}",
                self.train_frac
            )));
        }
        if self.cv_folds < 2 || self.kde_cv_folds < 2 {
            return Err(PipelineError::BadConfig(format!(
                "cv_folds and kde_cv_folds must be at least 2, got {} and {}",
                self.cv_folds, self.kde_cv_folds
            )));
        }
        if self.method.uses_network() {
            self.mdn.validate()?;
        }
        Ok(())
    }
}

/// First 16 hex digits of the SHA-256 of the serialized options: the
/// `config_hash` recorded in results files.
pub fn config_hash(options: &EstimateOptions) -> String {
    let json = serde_json::to_string(options).expect("options always serialize");
    let digest = Sha256::digest(json.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Inputs to [`estimate_corpus`]; embedding sources are only required by
/// the methods that consume them.
#[derive(Clone, Copy)]
pub struct EstimateInput<'a> {
    pub corpus: &'a Corpus,
    pub cache: &'a ProsodyCache,
    pub static_vectors: Option<&'a EmbeddingTable>,
    pub context_store: Option<&'a ContextEmbeddingStore>,
}

/// A finished estimation run.
#[derive(Clone, Debug)]
pub struct EstimateOutcome {
    pub estimate: MiEstimate,
    pub stats: DatasetStats,
    pub config_hash: String,
}

fn derive_seed(seed: u64, salt: u64) -> u64 {
    seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Splits items into (fit, eval) by whole utterances: a seeded shuffle of
/// the distinct utterance indices, the first `round(frac·n)` (clamped to
/// leave both sides non-empty) going to the fitting side. Item order is
/// preserved within each side.
pub(crate) fn split_items_by_utterance(
    items: &[TokenInstance],
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<TokenInstance>, Vec<TokenInstance>), PipelineError> {
    let utterances: BTreeSet<usize> = items.iter().map(|it| it.utterance).collect();
    if utterances.len() < 2 {
        return Err(PipelineError::BadConfig(
            "an utterance-level split needs at least two utterances with usable tokens"
                .to_string(),
        ));
    }
    let mut order: Vec<usize> = utterances.into_iter().collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n = order.len();
    let n_train = ((train_frac * n as f64).round() as usize).clamp(1, n - 1);
    let train_set: BTreeSet<usize> = order.into_iter().take(n_train).collect();
    let (fit, eval): (Vec<_>, Vec<_>) = items
        .iter()
        .cloned()
        .partition(|it| train_set.contains(&it.utterance));
    Ok((fit, eval))
}

fn standardizer_for(items: &[TokenInstance], standardize: bool) -> Standardizer {
    if standardize {
        let vectors: Vec<ProsodyVector> = items.iter().map(|it| it.vector).collect();
        Standardizer::fit(&vectors)
    } else {
        Standardizer::identity()
    }
}

fn conditional_kde_config(options: &EstimateOptions, mode: KdeMode) -> ConditionalKdeConfig {
    ConditionalKdeConfig {
        lambda: options.lambda,
        mode,
        train_frac: options.train_frac,
        seed: options.seed,
        fixed_bandwidths: options.kde_bandwidths.clone(),
        cv_folds: options.kde_cv_folds,
        per_word_bandwidth: options.kde_per_word_bandwidth,
    }
}

/// Runs one estimation method over one corpus and returns the labeled MI
/// estimate with dataset accounting and the configuration fingerprint.
pub fn estimate_corpus(
    input: &EstimateInput<'_>,
    options: &EstimateOptions,
) -> Result<EstimateOutcome, PipelineError> {
    options.validate()?;
    let method = options.method;
    let conditioning = match method {
        Method::KdeAll | Method::KdeSplit => ConditioningSource::None,
        Method::MdnW => ConditioningSource::Static(input.static_vectors.ok_or_else(|| {
            PipelineError::MissingConditioning {
                method: method.to_string(),
                needed: "a static word-vector table".to_string(),
            }
        })?),
        Method::MdnWLeft | Method::MdnWBi => {
            let store =
                input
                    .context_store
                    .ok_or_else(|| PipelineError::MissingConditioning {
                        method: method.to_string(),
                        needed: "a per-token context-vector store".to_string(),
                    })?;
            let expected = method.context_kind().expect("context methods have a kind");
            if store.context_kind() != expected {
                return Err(PipelineError::ContextKindMismatch {
                    method: method.to_string(),
                    expected,
                    got: store.context_kind(),
                });
            }
            ConditioningSource::Contextual(store)
        }
    };
    let dataset = assemble_dataset(
        input.corpus,
        input.cache,
        conditioning,
        options.drop_oov,
        options.max_tokens_per_word,
    )?;
    let label = EstimateLabel {
        language: input.corpus.language.clone(),
        prosodic_type: input.corpus.prosodic_type,
        method: method.label().to_string(),
    };

    let estimate = match method {
        Method::KdeAll => {
            kde_estimate(&dataset.items, &dataset.items, KdeMode::All, options, &label)?
        }
        Method::KdeSplit => {
            let (fit, eval) =
                split_items_by_utterance(&dataset.items, options.train_frac, options.seed)?;
            kde_estimate(&fit, &eval, KdeMode::Split, options, &label)?
        }
        Method::MdnW | Method::MdnWLeft | Method::MdnWBi => {
            mdn_cv_estimate(&dataset.items, options, &label)?
        }
    };

    Ok(EstimateOutcome {
        estimate,
        stats: dataset.stats,
        config_hash: config_hash(options),
    })
}

/// Conditional-KDE estimation: fit on `fit`, score on `eval`. Backed-off
/// items score identically under both models, contributing exactly zero
/// pointwise MI.
fn kde_estimate(
    fit: &[TokenInstance],
    eval: &[TokenInstance],
    mode: KdeMode,
    options: &EstimateOptions,
    label: &EstimateLabel,
) -> Result<MiEstimate, PipelineError> {
    let standardizer = standardizer_for(fit, options.standardize);
    let jacobian = standardizer.log_jacobian();
    let fit_pairs: Vec<(String, ProsodyVector)> = fit
        .iter()
        .map(|it| (it.form.clone(), standardizer.apply(&it.vector)))
        .collect();
    let eval_pairs: Vec<(String, ProsodyVector)> = eval
        .iter()
        .map(|it| (it.form.clone(), standardizer.apply(&it.vector)))
        .collect();

    let model = fit_conditional_parts(&fit_pairs, mode, &conditional_kde_config(options, mode))?;
    let uncertainty = UncertaintyConfig {
        bootstrap_resamples: options.bootstrap_resamples,
        seed: options.seed,
    };
    let estimate = estimate_mi(
        |pair: &(String, ProsodyVector)| kde_log_density(model.fallback(), &pair.1) - jacobian,
        |pair: &(String, ProsodyVector)| conditional_log_density(&model, &pair.1, &pair.0) - jacobian,
        &eval_pairs,
        label,
        &uncertainty,
    )?;
    Ok(estimate)
}

/// Network estimation under utterance-grouped cross-validation: per fold, a
/// KDE (unconditional) and an MDN (conditional) are fit on the fold's
/// complement and both scored on the held-out fold; the reported
/// uncertainty is the spread across folds.
fn mdn_cv_estimate(
    items: &[TokenInstance],
    options: &EstimateOptions,
    label: &EstimateLabel,
) -> Result<MiEstimate, PipelineError> {
    let groups: Vec<usize> = items.iter().map(|it| it.utterance).collect();
    let fold_counter = Cell::new(0u64);

    let estimate = cv_mi(
        items,
        Some(&groups),
        options.cv_folds,
        options.seed,
        label,
        |train: &[TokenInstance], test: &[TokenInstance]| -> Result<FoldScore, String> {
            let fold = fold_counter.get();
            fold_counter.set(fold + 1);

            let standardizer = standardizer_for(train, options.standardize);
            let jacobian = standardizer.log_jacobian();

            // Unconditional density: bandwidth by cross-validation on the
            // fitting vectors, then a KDE over all of them.
            let train_vectors: Vec<ProsodyVector> =
                train.iter().map(|it| standardizer.apply(&it.vector)).collect();
            let mut candidates = vec![
                rule_bandwidth(&train_vectors, BandwidthRule::Scott).map_err(|e| e.to_string())?,
                rule_bandwidth(&train_vectors, BandwidthRule::Silverman)
                    .map_err(|e| e.to_string())?,
            ];
            candidates.extend_from_slice(&options.kde_bandwidths);
            let bandwidth = select_bandwidth_cv(
                &train_vectors,
                &candidates,
                options.kde_cv_folds,
                derive_seed(options.seed, 101 + fold),
            )
            .map_err(|e| e.to_string())?;
            let kde = fit_kde(&train_vectors, bandwidth).map_err(|e| e.to_string())?;

            // Conditional density: carve an early-stopping validation set
            // out of the fitting side, then train the network.
            let (fit_items, val_items) = split_items_by_utterance(
                train,
                options.train_frac.max(0.8),
                derive_seed(options.seed, 201 + fold),
            )
            .map_err(|e| e.to_string())?;
            let to_sample = |it: &TokenInstance| -> MdnSample {
                (
                    it.embedding.clone().expect("network methods assemble embeddings"),
                    standardizer.apply(&it.vector),
                )
            };
            let fit_samples: Vec<MdnSample> = fit_items.iter().map(to_sample).collect();
            let val_samples: Vec<MdnSample> = val_items.iter().map(to_sample).collect();
            let mut train_config = options.mdn.clone();
            train_config.seed = derive_seed(options.seed, 301 + fold);
            let run =
                train_mdn(&fit_samples, &train_config, &val_samples).map_err(|e| e.to_string())?;

            // Score both models on the identical held-out tokens and map
            // the entropies back to data-space nats.
            let test_vectors: Vec<ProsodyVector> =
                test.iter().map(|it| standardizer.apply(&it.vector)).collect();
            let unconditional: Vec<f64> = test_vectors
                .iter()
                .map(|v| jacobian - kde_log_density(&kde, v))
                .collect();
            let test_samples: Vec<MdnSample> = test.iter().map(to_sample).collect();
            let conditional_std =
                dataset_nll(&run.model, &test_samples).map_err(|e| e.to_string())?;
            Ok(FoldScore {
                h_unconditional: math::mean(&unconditional),
                h_conditional: conditional_std + jacobian,
            })
        },
    )?;
    Ok(estimate)
}

// ---------------------------------------------------------------------------
// Extraction stage
// ---------------------------------------------------------------------------

/// Settings for [`extract_corpus`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractOptions {
    pub f0: F0Config,
    pub preprocess: PreprocessConfig,
}

/// One word that produced no pitch vector, with the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedWord {
    pub utterance_id: String,
    pub word_index: usize,
    pub reason: String,
}

/// Accounting from the extraction stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractReport {
    pub cached: usize,
    pub skipped: Vec<SkippedWord>,
}

/// Turns referenced audio or f0 tracks into word-level pitch vectors.
///
/// Per utterance, the f0 track comes from its `f0_ref` when present,
/// otherwise from running pitch extraction on its `audio_ref`; relative
/// references resolve against `root`. Missing or unreadable referenced
/// files are hard errors; signal-level failures (no voiced frames, spans
/// outside the track, …) skip the affected words and are reported.
/// Utterances run in parallel; output is deterministic.
pub fn extract_corpus(
    corpus: &Corpus,
    root: &Path,
    options: &ExtractOptions,
) -> Result<(ProsodyCache, ExtractReport), PipelineError> {
    type WordVectors = Vec<(String, usize, ProsodyVector)>;

    let per_utterance: Vec<Result<(WordVectors, Vec<SkippedWord>), PipelineError>> = corpus
        .utterances
        .par_iter()
        .map(|utt| {
            let mut skipped = Vec::new();
            let skip_all = |reason: &str| -> (WordVectors, Vec<SkippedWord>) {
                (
                    Vec::new(),
                    utt.words
                        .iter()
                        .map(|w| SkippedWord {
                            utterance_id: utt.utterance_id.clone(),
                            word_index: w.index,
                            reason: reason.to_string(),
                        })
                        .collect(),
                )
            };

            let raw_track = if let Some(f0_ref) = &utt.f0_ref {
                load_f0_track(&root.join(f0_ref))?
            } else if let Some(audio_ref) = &utt.audio_ref {
                let audio = read_wav_mono(&root.join(audio_ref))?;
                extract_f0(&audio.samples, audio.sample_rate, &options.f0)?
            } else {
                return Ok(skip_all("no audio or f0 reference"));
            };

            let track = match preprocess_track(&raw_track, &options.preprocess) {
                Ok(track) => track,
                Err(e @ (PitchError::NoVoicedFrames | PitchError::AllFramesOutliers)) => {
                    return Ok(skip_all(&e.to_string()));
                }
                Err(other) => return Err(other.into()),
            };

            let mut vectors = Vec::new();
            for word in &utt.words {
                match word_curve(&track, word.start_s, word.end_s) {
                    Ok(curve) => {
                        vectors.push((utt.utterance_id.clone(), word.index, dct4(&curve)));
                    }
                    Err(
                        e @ (PitchError::SpanOutOfRange { .. } | PitchError::DegenerateSpan { .. }),
                    ) => {
                        skipped.push(SkippedWord {
                            utterance_id: utt.utterance_id.clone(),
                            word_index: word.index,
                            reason: e.to_string(),
                        });
                    }
                    Err(other) => return Err(other.into()),
                }
            }
            Ok((vectors, skipped))
        })
        .collect();

    let mut cache = ProsodyCache::new();
    let mut report = ExtractReport::default();
    for result in per_utterance {
        let (vectors, skipped) = result?;
        for (id, index, vector) in vectors {
            cache.insert(&id, index, vector);
            report.cached += 1;
        }
        report.skipped.extend(skipped);
    }
    Ok((cache, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_manifest_with, ManifestOptions, ProsodicType};
    use crate::pitch::{save_f0_track, F0Track, Normalization};
    use crate::synth::{generate, standard_tone_means, SynthSpec};
    use approx::assert_abs_diff_eq;

    fn two_tone_spec(n_sentences: usize, separation: f64) -> SynthSpec {
        SynthSpec {
            n_tones: 2,
            tone_means: standard_tone_means(2, separation),
            tone_stddevs: vec![[1.0; VECTOR_DIM]; 2],
            lexicon_size: 4,
            n_sentences,
            tokens_per_sentence: 10,
            ..SynthSpec::default()
        }
    }

    fn shuffle_cache(corpus: &Corpus, cache: &ProsodyCache, seed: u64) -> ProsodyCache {
        let mut vectors: Vec<ProsodyVector> = Vec::new();
        let mut keys: Vec<(String, usize)> = Vec::new();
        for utt in &corpus.utterances {
            for word in &utt.words {
                keys.push((utt.utterance_id.clone(), word.index));
                vectors.push(*cache.get(&utt.utterance_id, word.index).unwrap());
            }
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        vectors.shuffle(&mut rng);
        let mut shuffled = ProsodyCache::new();
        for ((id, index), v) in keys.into_iter().zip(vectors) {
            shuffled.insert(&id, index, v);
        }
        shuffled
    }

    #[test]
    fn method_tokens_and_labels_round_trip() {
        for method in Method::ALL {
            assert_eq!(method.cli_token().parse::<Method>().unwrap(), method);
            let json = serde_json::to_string(&method).unwrap();
            assert_eq!(json, format!("\"{}\"", method.cli_token()));
            assert_eq!(serde_json::from_str::<Method>(&json).unwrap(), method);
        }
        assert_eq!(Method::KdeAll.label(), "KDE-W(all)");
        assert_eq!(Method::MdnWLeft.label(), "MDN-W←");
        assert!("kde".parse::<Method>().is_err());
    }

    #[test]
    fn standardizer_normalizes_and_reports_its_jacobian() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let vectors: Vec<ProsodyVector> = (0..500)
            .map(|_| {
                ProsodyVector([
                    10.0 + 3.0 * rng.gen::<f64>(),
                    rng.gen::<f64>(),
                    -5.0 + 0.1 * rng.gen::<f64>(),
                    4.0, // constant dimension
                ])
            })
            .collect();
        let s = Standardizer::fit(&vectors);
        let transformed: Vec<ProsodyVector> = vectors.iter().map(|v| s.apply(v)).collect();
        for j in 0..3 {
            let column: Vec<f64> = transformed.iter().map(|v| v.0[j]).collect();
            assert_abs_diff_eq!(math::mean(&column), 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(math::sample_std(&column), 1.0, epsilon = 1e-10);
        }
        // The constant dimension passes through centered but unscaled.
        assert!(transformed.iter().all(|v| v.0[3] == 0.0));
        assert!(s.log_jacobian().is_finite());
        assert_eq!(Standardizer::identity().log_jacobian(), 0.0);
    }

    #[test]
    fn assembly_counts_every_exclusion() {
        let spec = SynthSpec {
            n_sentences: 4,
            tokens_per_sentence: 5,
            ..SynthSpec::default()
        };
        let synth = generate(&spec).unwrap();

        // Remove one cached vector: that token is excluded and counted.
        let mut holey = ProsodyCache::new();
        let mut dropped_one = false;
        for utt in &synth.corpus.utterances {
            for word in &utt.words {
                if !dropped_one {
                    dropped_one = true;
                    continue;
                }
                holey.insert(
                    &utt.utterance_id,
                    word.index,
                    *synth.cache.get(&utt.utterance_id, word.index).unwrap(),
                );
            }
        }
        let dataset = assemble_dataset(
            &synth.corpus,
            &holey,
            ConditioningSource::None,
            false,
            None,
        )
        .unwrap();
        assert_eq!(dataset.stats.total_tokens, 20);
        assert_eq!(dataset.stats.missing_pitch, 1);
        assert_eq!(dataset.stats.used_tokens, 19);

        // Static conditioning: an impoverished table yields zero vectors,
        // or drops under drop_oov.
        let tiny_table = EmbeddingTable::one_hot(&["w0000".to_string()]).unwrap();
        let with_zeros = assemble_dataset(
            &synth.corpus,
            &synth.cache,
            ConditioningSource::Static(&tiny_table),
            false,
            None,
        )
        .unwrap();
        assert!(with_zeros.stats.oov_zero_vector > 0);
        assert_eq!(with_zeros.stats.used_tokens, 20);
        let without_oov = assemble_dataset(
            &synth.corpus,
            &synth.cache,
            ConditioningSource::Static(&tiny_table),
            true,
            None,
        )
        .unwrap();
        assert_eq!(
            without_oov.stats.used_tokens + without_oov.stats.dropped_oov,
            20
        );
    }

    #[test]
    fn subword_cap_filters_at_assembly_without_reindexing() {
        let spec = SynthSpec {
            n_sentences: 2,
            tokens_per_sentence: 4,
            ..SynthSpec::default()
        };
        let mut synth = generate(&spec).unwrap();
        // Mark the first word of each utterance as a 3-subword token.
        for utt in &mut synth.corpus.utterances {
            utt.words[0].n_subword_tokens = Some(3);
        }
        let dataset = assemble_dataset(
            &synth.corpus,
            &synth.cache,
            ConditioningSource::None,
            false,
            Some(2),
        )
        .unwrap();
        assert_eq!(dataset.stats.skipped_by_cap, 2);
        assert_eq!(dataset.stats.used_tokens, 6);
        // Surviving tokens keep their original indices (no index 0 left).
        assert!(dataset.items.iter().all(|it| it.word_index != 0));

        let mut unannotated = synth.corpus.clone();
        unannotated.utterances[0].words[1].n_subword_tokens = None;
        assert!(matches!(
            assemble_dataset(
                &unannotated,
                &synth.cache,
                ConditioningSource::None,
                false,
                Some(2)
            ),
            Err(PipelineError::Corpus(_))
        ));
    }

    #[test]
    fn kde_split_recovers_the_synthetic_oracle() {
        let spec = two_tone_spec(300, 8.0);
        let synth = generate(&spec).unwrap();
        let truth = crate::synth::true_mi(&spec, 50_000).unwrap();

        let options = EstimateOptions::default();
        let outcome = estimate_corpus(
            &EstimateInput {
                corpus: &synth.corpus,
                cache: &synth.cache,
                static_vectors: None,
                context_store: None,
            },
            &options,
        )
        .unwrap();
        let mi = outcome.estimate.mi_nats;
        let tolerance = f64::max(0.1, 3.0 * outcome.estimate.stderr);
        assert!(
            (mi - truth.nats).abs() <= tolerance,
            "KDE split MI {mi} vs oracle {} (tolerance {tolerance})",
            truth.nats
        );
        assert_eq!(outcome.estimate.method, "KDE-W(split)");
        assert_eq!(outcome.stats.used_tokens, 3000);
    }

    #[test]
    fn kde_all_tracks_the_oracle_from_above() {
        let spec = two_tone_spec(250, 8.0);
        let synth = generate(&spec).unwrap();
        let truth = crate::synth::true_mi(&spec, 50_000).unwrap();

        let options = EstimateOptions {
            method: Method::KdeAll,
            ..EstimateOptions::default()
        };
        let outcome = estimate_corpus(
            &EstimateInput {
                corpus: &synth.corpus,
                cache: &synth.cache,
                static_vectors: None,
                context_store: None,
            },
            &options,
        )
        .unwrap();
        // Fitting and evaluating on the same tokens rewards the per-word
        // models more than the pooled one (fewer points each, so the
        // self-point kernel term is larger), so this protocol overshoots
        // the oracle; it must still land in its neighborhood.
        let mi = outcome.estimate.mi_nats;
        assert!(
            mi >= truth.nats - 0.05 && mi <= truth.nats + 0.35,
            "KDE all MI {mi} vs oracle {}",
            truth.nats
        );
    }

    #[test]
    fn mdn_w_recovers_the_synthetic_oracle() {
        let spec = two_tone_spec(250, 8.0);
        let synth = generate(&spec).unwrap();
        let truth = crate::synth::true_mi(&spec, 50_000).unwrap();

        let options = EstimateOptions {
            method: Method::MdnW,
            mdn: TrainConfig {
                learning_rate: 0.01,
                dropout: 0.0,
                hidden_units: 16,
                kernels: 4,
                max_epochs: 25,
                early_stop_patience: 3,
                ..TrainConfig::default()
            },
            ..EstimateOptions::default()
        };
        let outcome = estimate_corpus(
            &EstimateInput {
                corpus: &synth.corpus,
                cache: &synth.cache,
                static_vectors: Some(&synth.embeddings),
                context_store: None,
            },
            &options,
        )
        .unwrap();
        // The network matches the conditional law almost exactly, so the
        // estimate's error is dominated by the held-out excess of the
        // unconditional KDE at this sample size — a positive, shrinking-
        // with-n bias. Accept a one-sided window around the oracle.
        let mi = outcome.estimate.mi_nats;
        assert!(
            mi >= truth.nats - 0.05 && mi <= truth.nats + 0.25,
            "MDN MI {mi} vs oracle {} (stderr {})",
            truth.nats,
            outcome.estimate.stderr
        );
        assert_eq!(outcome.estimate.method, "MDN-W");
    }

    #[test]
    fn shuffled_pairings_give_near_zero_mi() {
        // All tone distributions coincide, so pitch carries no word
        // information even before the pairings are shuffled.
        let spec = SynthSpec {
            n_tones: 4,
            tone_means: standard_tone_means(4, 0.0),
            tone_stddevs: vec![[1.0; VECTOR_DIM]; 4],
            lexicon_size: 4,
            n_sentences: 300,
            tokens_per_sentence: 10,
            ..SynthSpec::default()
        };
        let synth = generate(&spec).unwrap();
        let shuffled = shuffle_cache(&synth.corpus, &synth.cache, 99);

        // Per-word bandwidths keep the word models as well-smoothed as the
        // pooled one; a bandwidth tuned on the larger pool would undersmooth
        // them and drag the estimate negative.
        let options = EstimateOptions {
            kde_per_word_bandwidth: true,
            ..EstimateOptions::default()
        };
        let outcome = estimate_corpus(
            &EstimateInput {
                corpus: &synth.corpus,
                cache: &shuffled,
                static_vectors: None,
                context_store: None,
            },
            &options,
        )
        .unwrap();
        assert!(
            outcome.estimate.mi_nats.abs() <= 0.1,
            "independent pairings should give ≈0 MI, got {}",
            outcome.estimate.mi_nats
        );
    }

    #[test]
    fn universal_backoff_gives_exactly_zero_mi() {
        let spec = two_tone_spec(60, 6.0);
        let synth = generate(&spec).unwrap();
        let options = EstimateOptions {
            lambda: usize::MAX,
            ..EstimateOptions::default()
        };
        let outcome = estimate_corpus(
            &EstimateInput {
                corpus: &synth.corpus,
                cache: &synth.cache,
                static_vectors: None,
                context_store: None,
            },
            &options,
        )
        .unwrap();
        assert_eq!(outcome.estimate.mi_nats, 0.0);
        assert_eq!(outcome.estimate.stderr, 0.0);
        assert_eq!(
            outcome.estimate.h_unconditional.nats,
            outcome.estimate.h_conditional.nats
        );
    }

    #[test]
    fn estimation_is_deterministic_and_hashes_its_config() {
        let spec = two_tone_spec(60, 6.0);
        let synth = generate(&spec).unwrap();
        let input = EstimateInput {
            corpus: &synth.corpus,
            cache: &synth.cache,
            static_vectors: None,
            context_store: None,
        };
        let options = EstimateOptions::default();
        let a = estimate_corpus(&input, &options).unwrap();
        let b = estimate_corpus(&input, &options).unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.config_hash, b.config_hash);
        assert_eq!(a.config_hash.len(), 16);

        let reseeded = EstimateOptions {
            seed: 1,
            ..EstimateOptions::default()
        };
        assert_ne!(config_hash(&options), config_hash(&reseeded));
    }

    #[test]
    fn context_methods_check_their_sources() {
        let spec = two_tone_spec(10, 6.0);
        let synth = generate(&spec).unwrap();
        let input = EstimateInput {
            corpus: &synth.corpus,
            cache: &synth.cache,
            static_vectors: None,
            context_store: None,
        };
        let options = EstimateOptions {
            method: Method::MdnW,
            ..EstimateOptions::default()
        };
        assert!(matches!(
            estimate_corpus(&input, &options),
            Err(PipelineError::MissingConditioning { .. })
        ));
        let options = EstimateOptions {
            method: Method::MdnWBi,
            ..EstimateOptions::default()
        };
        assert!(matches!(
            estimate_corpus(&input, &options),
            Err(PipelineError::MissingConditioning { .. })
        ));
    }

    fn sine_wave(f0: f64, duration_s: f64, sample_rate: f64) -> Vec<f64> {
        (0..(duration_s * sample_rate) as usize)
            .map(|i| 0.4 * (2.0 * std::f64::consts::PI * f0 * i as f64 / sample_rate).sin())
            .collect()
    }

    fn manifest_line(id: &str, audio: Option<&str>, f0: Option<&str>) -> String {
        let mut record = serde_json::json!({
            "utterance_id": id,
            "language": "EN",
            "speaker_id": "s1",
            "text": "one two",
            "words": [
                {"form": "one", "start_s": 0.10, "end_s": 0.45},
                {"form": "two", "start_s": 0.55, "end_s": 0.90}
            ]
        });
        if let Some(a) = audio {
            record["audio_ref"] = serde_json::json!(a);
        }
        if let Some(f) = f0 {
            record["f0_ref"] = serde_json::json!(f);
        }
        record.to_string()
    }

    #[test]
    fn extraction_caches_vectors_from_audio_and_f0_references() {
        let dir = tempfile::tempdir().unwrap();
        let sr = 16_000.0;
        crate::audio::write_wav_mono(
            &dir.path().join("u1.wav"),
            &sine_wave(220.0, 1.0, sr),
            sr as u32,
        )
        .unwrap();
        let track = F0Track::new(0.01, vec![180.0; 101], vec![true; 101]).unwrap();
        save_f0_track(&track, &dir.path().join("u2.f0")).unwrap();

        let manifest = dir.path().join("speech.jsonl");
        std::fs::write(
            &manifest,
            format!(
                "{}\n{}\n",
                manifest_line("u1", Some("u1.wav"), None),
                manifest_line("u2", None, Some("u2.f0")),
            ),
        )
        .unwrap();
        let corpus = load_manifest_with(&manifest, &ManifestOptions::default()).unwrap();
        assert_eq!(corpus.prosodic_type, ProsodicType::StressAccent);

        let (cache, report) =
            extract_corpus(&corpus, dir.path(), &ExtractOptions::default()).unwrap();
        assert_eq!(report.cached, 4);
        assert!(report.skipped.is_empty());
        // Constant-pitch utterances under log-mean normalization give
        // near-zero curves, hence near-zero coefficient vectors.
        for id in ["u1", "u2"] {
            for index in [0, 1] {
                let v = cache.get(id, index).unwrap();
                assert!(v.is_finite());
                assert!(v.0[0].abs() < 1.0, "{id}/{index}: {:?}", v.0);
            }
        }
    }

    #[test]
    fn extraction_skips_unvoiced_utterances_and_reports_them() {
        let dir = tempfile::tempdir().unwrap();
        let sr = 16_000.0;
        // Noise-free silence: the power gate leaves every frame unvoiced.
        crate::audio::write_wav_mono(&dir.path().join("quiet.wav"), &vec![0.0; 16_000], sr as u32)
            .unwrap();
        let manifest = dir.path().join("speech.jsonl");
        std::fs::write(
            &manifest,
            format!("{}\n", manifest_line("quiet", Some("quiet.wav"), None)),
        )
        .unwrap();
        let corpus = load_manifest_with(&manifest, &ManifestOptions::default()).unwrap();
        let (cache, report) =
            extract_corpus(&corpus, dir.path(), &ExtractOptions::default()).unwrap();
        assert_eq!(cache.len(), 0);
        assert_eq!(report.skipped.len(), 2);
        assert!(report.skipped[0].reason.contains("voiced"));
    }

    #[test]
    fn raw_normalization_keeps_the_frequency_scale() {
        let dir = tempfile::tempdir().unwrap();
        let sr = 16_000.0;
        crate::audio::write_wav_mono(
            &dir.path().join("u1.wav"),
            &sine_wave(200.0, 1.0, sr),
            sr as u32,
        )
        .unwrap();
        let manifest = dir.path().join("speech.jsonl");
        std::fs::write(
            &manifest,
            format!("{}\n", manifest_line("u1", Some("u1.wav"), None)),
        )
        .unwrap();
        let corpus = load_manifest_with(&manifest, &ManifestOptions::default()).unwrap();
        let options = ExtractOptions {
            preprocess: PreprocessConfig {
                normalization: Normalization::Raw,
                ..PreprocessConfig::default()
            },
            ..ExtractOptions::default()
        };
        let (cache, _) = extract_corpus(&corpus, dir.path(), &options).unwrap();
        // A constant 200 Hz curve has first coefficient 200·√100 = 2000.
        let v = cache.get("u1", 0).unwrap();
        assert_abs_diff_eq!(v.0[0], 2000.0, epsilon = 40.0);
    }
}
