//! Mutual information between word identity and word-level pitch contours.
//!
//! The pipeline turns speech — or synthetic corpora with a known answer —
//! into fixed-length pitch vectors and asks how much knowing the word tells
//! you about its melody:
//!
//! 1. [`audio`] and [`pitch`]: read mono WAV signals, track f0, preprocess
//!    tracks (voicing, octave-outlier removal, log-mean normalization),
//!    cut word spans, resample each to 100 points, and keep the first four
//!    DCT-II coefficients as the word's prosody vector.
//! 2. [`corpus`] and [`embeddings`]: JSON-lines manifests carrying word
//!    tokens with time spans, plus optional static word vectors or
//!    contextual vector stores for network conditioning.
//! 3. [`kde`] and [`mdn`]: unconditional and per-word Gaussian kernel
//!    density estimates with occurrence-threshold backoff, and mixture
//!    density networks conditioned on word vectors.
//! 4. [`estimator`]: cross-entropy estimates of the marginal and
//!    word-conditional contour entropies on the same held-out tokens,
//!    their difference (the mutual information), paired-bootstrap
//!    uncertainty, and an ordered permutation trend test across groups.
//! 5. [`pipeline`], [`report`], and [`cli`]: end-to-end orchestration,
//!    results CSV, vector-graphic charts, and the `prosody-mi` binary.
//! 6. [`synth`]: tone corpora with a closed-form generative law and a
//!    Monte Carlo ground-truth MI, used for calibration and testing.
//!
//! Every stage is deterministic in its master seed; identical
//! configurations reproduce results byte for byte.
//!
//! # Example
//!
//! Estimate MI on a synthetic four-tone corpus whose true value is ln 4:
//!
//! ```
//! use prosody_mi::pipeline::{estimate_corpus, EstimateInput, EstimateOptions, Method};
//! use prosody_mi::synth::{generate, standard_tone_means, SynthSpec};
//!
//! let spec = SynthSpec {
//!     tone_means: standard_tone_means(4, 8.0),
//!     lexicon_size: 4,
//!     tokens_per_sentence: 6,
//!     n_sentences: 80,
//!     ..SynthSpec::default()
//! };
//! let data = generate(&spec)?;
//!
//! let options = EstimateOptions {
//!     method: Method::KdeSplit,
//!     lambda: 10,
//!     ..EstimateOptions::default()
//! };
//! let input = EstimateInput {
//!     corpus: &data.corpus,
//!     cache: &data.cache,
//!     static_vectors: None,
//!     context_store: None,
//! };
//! let outcome = estimate_corpus(&input, &options)?;
//! // Four well-separated tones under a small lexicon: strong dependence.
//! assert!(outcome.estimate.mi_nats > 0.5);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod audio;
pub mod cli;
pub mod corpus;
pub mod embeddings;
pub mod estimator;
pub mod kde;
mod math;
pub mod mdn;
pub mod pipeline;
pub mod pitch;
pub mod report;
pub mod synth;

pub use corpus::{load_manifest, save_manifest, Corpus, ProsodicType};
pub use estimator::{
    jonckheere_test, read_results_csv, write_results_csv, MiEstimate, ResultRow, TrendResult,
};
pub use pipeline::{
    estimate_corpus, extract_corpus, EstimateInput, EstimateOptions, EstimateOutcome, Method,
};
pub use pitch::{dct4, idct4, PitchCurve, ProsodyCache, ProsodyVector, VECTOR_DIM};
pub use synth::{generate, true_mi, SynthSpec};
