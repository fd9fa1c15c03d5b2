//! Synthetic corpora along the tonal ↔ stress continuum with recoverable
//! ground-truth mutual information, used as the desk-scale oracle for the
//! whole estimation pipeline.
//!
//! The generative law: each lexicon word is assigned a tone (word `i` gets
//! tone `i mod n_tones`); each token keeps its word's tone with probability
//! `1 − leak` and otherwise draws a uniform random tone; the token's pitch
//! vector is then sampled from that tone's diagonal Gaussian. Because all
//! conditional and marginal densities are exact finite mixtures, the MI
//! between word identity and pitch vector can be estimated to arbitrary
//! Monte Carlo precision by [`true_mi`] — independently of the estimators
//! under test. `leak = 0` with well-separated tones approaches
//! `ln(n_tones)`; `leak = 1` severs the word–pitch link and gives 0.

use rand::prelude::*;
use rand::distributions::WeightedIndex;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, ProsodicType, TokenizationScheme, Utterance, WordToken};
use crate::embeddings::EmbeddingTable;
use crate::math;
use crate::pitch::{ProsodyCache, ProsodyVector, VECTOR_DIM};

/// Errors from invalid synthetic-corpus specifications.
#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid specification: {0}")]
    BadSpec(String),
    #[error("Monte Carlo oracle needs at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("no leak value in [0, 1] reaches target MI {target} (range [{lo}, {hi}])")]
    TargetOutOfRange { target: f64, lo: f64, hi: f64 },
}

/// Generative specification of an artificial language.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Number of tone categories (≥ 1).
    pub n_tones: usize,
    /// Mean pitch vector per tone.
    pub tone_means: Vec<[f64; VECTOR_DIM]>,
    /// Per-dimension standard deviation per tone (all positive).
    pub tone_stddevs: Vec<[f64; VECTOR_DIM]>,
    /// Lexicon size; word `i` is assigned tone `i mod n_tones`.
    pub lexicon_size: usize,
    /// Probability that a token ignores its word's tone and draws a
    /// uniform random tone instead (0 = fully lexical, 1 = independent).
    pub leak: f64,
    /// Unnormalized word sampling weights (uniform when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word_weights: Option<Vec<f64>>,
    /// Words per generated sentence.
    pub tokens_per_sentence: usize,
    /// Number of generated sentences.
    pub n_sentences: usize,
    /// Master seed for generation and the Monte Carlo oracle.
    pub seed: u64,
    /// Language tag stamped onto the corpus.
    pub language: String,
    /// Prosodic-type label stamped onto the corpus.
    pub prosodic_type: ProsodicType,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_tones: 4,
            tone_means: standard_tone_means(4, 6.0),
            tone_stddevs: vec![[1.0; VECTOR_DIM]; 4],
            lexicon_size: 8,
            leak: 0.0,
            word_weights: None,
            tokens_per_sentence: 10,
            n_sentences: 500,
            seed: 0,
            language: "synthetic".to_string(),
            prosodic_type: ProsodicType::Tonal,
        }
    }
}

/// Tone means spread along distinct coordinate directions with pairwise
/// distance `separation · √2` (for up to 4 tones; more tones reuse axes
/// with sign flips).
pub fn standard_tone_means(n_tones: usize, separation: f64) -> Vec<[f64; VECTOR_DIM]> {
    (0..n_tones)
        .map(|t| {
            let mut mean = [0.0; VECTOR_DIM];
            let axis = t % VECTOR_DIM;
            let sign = if (t / VECTOR_DIM).is_multiple_of(2) { 1.0 } else { -1.0 };
            mean[axis] = sign * separation;
            mean
        })
        .collect()
}

impl SynthSpec {
    fn validate(&self) -> Result<(), SynthError> {
        if self.n_tones == 0 {
            return Err(SynthError::BadSpec("n_tones must be at least 1".to_string()));
        }
        if self.tone_means.len() != self.n_tones || self.tone_stddevs.len() != self.n_tones {
            return Err(SynthError::BadSpec(format!(
                "tone_means/tone_stddevs must each hold {} entries, got {} and {}",
                self.n_tones,
                self.tone_means.len(),
                self.tone_stddevs.len()
            )));
        }
        for (t, (mean, std)) in self.tone_means.iter().zip(&self.tone_stddevs).enumerate() {
            if mean.iter().any(|m| !m.is_finite()) {
                return Err(SynthError::BadSpec(format!("tone {t} mean is not finite")));
            }
            if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(SynthError::BadSpec(format!(
                    "tone {t} standard deviations must be positive"
                )));
            }
        }
        if self.lexicon_size == 0 || self.lexicon_size > 10_000 {
            return Err(SynthError::BadSpec(format!(
                "lexicon_size must be in 1..=10000, got {}",
                self.lexicon_size
            )));
        }
        if !(self.leak.is_finite() && (0.0..=1.0).contains(&self.leak)) {
            return Err(SynthError::BadSpec(format!(
                "leak must lie in [0, 1], got {}",
                self.leak
            )));
        }
        if let Some(weights) = &self.word_weights {
            if weights.len() != self.lexicon_size {
                return Err(SynthError::BadSpec(format!(
                    "word_weights must hold {} entries, got {}",
                    self.lexicon_size,
                    weights.len()
                )));
            }
            if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
                || weights.iter().sum::<f64>() <= 0.0
            {
                return Err(SynthError::BadSpec(
                    "word_weights must be non-negative with a positive sum".to_string(),
                ));
            }
        }
        if self.tokens_per_sentence == 0 || self.n_sentences == 0 {
            return Err(SynthError::BadSpec(
                "tokens_per_sentence and n_sentences must be positive".to_string(),
            ));
        }
        Ok(())
    }

    /// The tone deterministically assigned to lexicon word `i`.
    pub fn word_tone(&self, word_index: usize) -> usize {
        word_index % self.n_tones
    }

    /// The lexicon's word forms, in index order.
    pub fn word_forms(&self) -> Vec<String> {
        (0..self.lexicon_size).map(|i| format!("w{i:04}")).collect()
    }

    /// Normalized word sampling probabilities.
    fn word_probs(&self) -> Vec<f64> {
        match &self.word_weights {
            Some(weights) => {
                let total: f64 = weights.iter().sum();
                weights.iter().map(|w| w / total).collect()
            }
            None => vec![1.0 / self.lexicon_size as f64; self.lexicon_size],
        }
    }

    /// P(tone | word): `1 − leak` on the word's own tone plus a uniform
    /// `leak / n_tones` over all tones.
    fn tone_probs_given_word(&self, word_index: usize) -> Vec<f64> {
        let uniform = self.leak / self.n_tones as f64;
        let mut probs = vec![uniform; self.n_tones];
        probs[self.word_tone(word_index)] += 1.0 - self.leak;
        probs
    }

    /// Marginal P(tone) under the word distribution.
    fn tone_marginals(&self) -> Vec<f64> {
        let word_probs = self.word_probs();
        let mut marginal = vec![0.0; self.n_tones];
        for (w, pw) in word_probs.iter().enumerate() {
            for (t, pt) in self.tone_probs_given_word(w).iter().enumerate() {
                marginal[t] += pw * pt;
            }
        }
        marginal
    }
}

/// A generated artificial corpus: manifest-level structure, the pitch
/// vectors for every token, and one-hot word embeddings for the
/// network-based estimators.
#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub cache: ProsodyCache,
    pub embeddings: EmbeddingTable,
}

/// Generates a corpus from a specification, deterministically in the seed.
///
/// Sentences use independent counter-mode streams of the master seed, so
/// the output is stable under any evaluation order. Utterances carry no
/// audio or f0 references — pitch information lives in the returned
/// prosody-vector cache.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus, SynthError> {
    spec.validate()?;
    let forms = spec.word_forms();
    let word_probs = spec.word_probs();
    let word_dist = WeightedIndex::new(&word_probs)
        .expect("validated weights are non-negative with positive sum");

    let mut utterances = Vec::with_capacity(spec.n_sentences);
    let mut cache = ProsodyCache::new();
    for s in 0..spec.n_sentences {
        let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
        rng.set_stream(s as u64 + 1);
        let utterance_id = format!("synth-{s:05}");

        let mut words = Vec::with_capacity(spec.tokens_per_sentence);
        for t in 0..spec.tokens_per_sentence {
            let word = word_dist.sample(&mut rng);
            let tone = if spec.leak > 0.0 && rng.gen::<f64>() < spec.leak {
                rng.gen_range(0..spec.n_tones)
            } else {
                spec.word_tone(word)
            };
            let mut vector = [0.0; VECTOR_DIM];
            for (j, v) in vector.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *v = spec.tone_means[tone][j] + spec.tone_stddevs[tone][j] * z;
            }
            cache.insert(&utterance_id, t, ProsodyVector(vector));
            words.push(WordToken {
                form: forms[word].clone(),
                start_s: t as f64 * 0.5,
                end_s: t as f64 * 0.5 + 0.4,
                index: t,
                n_subword_tokens: Some(1),
            });
        }
        let text = words
            .iter()
            .map(|w| w.form.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        utterances.push(Utterance {
            utterance_id,
            language: spec.language.clone(),
            speaker_id: "synth".to_string(),
            text,
            words,
            audio_ref: None,
            f0_ref: None,
        });
    }

    Ok(SynthCorpus {
        corpus: Corpus {
            language: spec.language.clone(),
            prosodic_type: spec.prosodic_type,
            tokenization_scheme: TokenizationScheme::Word,
            utterances,
        },
        cache,
        embeddings: EmbeddingTable::one_hot(&forms)
            .expect("lexicon_size was validated positive"),
    })
}

/// Log-density of a diagonal Gaussian.
fn diag_gaussian_log_density(
    x: &[f64; VECTOR_DIM],
    mean: &[f64; VECTOR_DIM],
    std: &[f64; VECTOR_DIM],
) -> f64 {
    let mut total = 0.0;
    for j in 0..VECTOR_DIM {
        let z = (x[j] - mean[j]) / std[j];
        total += -std[j].ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z;
    }
    total
}

/// Exact log-density of a tone mixture with the given tone probabilities.
fn mixture_log_density(spec: &SynthSpec, tone_probs: &[f64], x: &[f64; VECTOR_DIM]) -> f64 {
    let terms: Vec<f64> = tone_probs
        .iter()
        .zip(&spec.tone_means)
        .zip(&spec.tone_stddevs)
        .map(|((&p, mean), std)| {
            if p > 0.0 {
                p.ln() + diag_gaussian_log_density(x, mean, std)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    math::log_sum_exp(&terms)
}

/// A Monte Carlo ground-truth MI value with its own sampling uncertainty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrueMi {
    /// MI between word identity and pitch vector, in nats.
    pub nats: f64,
    /// Monte Carlo standard error of the estimate.
    pub stderr: f64,
}

/// Ground-truth MI of a specification by Monte Carlo: draws `(word, vector)`
/// pairs from the generative law and averages the exact pointwise log-ratio
/// `ln p(x|w) − ln p(x)` computed from the closed-form mixtures. The
/// returned standard error reflects only Monte Carlo sampling noise.
///
/// The sampler uses stream 0 of the spec seed (corpus generation uses
/// streams 1 and up), so the oracle is independent of the emitted corpus
/// but still fully deterministic.
pub fn true_mi(spec: &SynthSpec, n_mc: usize) -> Result<TrueMi, SynthError> {
    spec.validate()?;
    if n_mc < 10_000 {
        return Err(SynthError::TooFewSamples {
            needed: 10_000,
            got: n_mc,
        });
    }
    let word_probs = spec.word_probs();
    let word_dist =
        WeightedIndex::new(&word_probs).expect("validated weights admit a distribution");
    let conditionals: Vec<Vec<f64>> = (0..spec.lexicon_size)
        .map(|w| spec.tone_probs_given_word(w))
        .collect();
    let marginal = spec.tone_marginals();

    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    rng.set_stream(0);
    let mut pmi = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let word = word_dist.sample(&mut rng);
        let tone_probs = &conditionals[word];
        let tone_dist =
            WeightedIndex::new(tone_probs).expect("tone probabilities are a distribution");
        let tone = tone_dist.sample(&mut rng);
        let mut x = [0.0; VECTOR_DIM];
        for (j, v) in x.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            *v = spec.tone_means[tone][j] + spec.tone_stddevs[tone][j] * z;
        }
        pmi.push(mixture_log_density(spec, tone_probs, &x) - mixture_log_density(spec, &marginal, &x));
    }
    Ok(TrueMi {
        nats: math::mean(&pmi),
        stderr: math::sample_std(&pmi) / (n_mc as f64).sqrt(),
    })
}

/// Finds the leak value whose ground-truth MI matches `target` to within
/// `tol` nats, by bisection on the strictly decreasing map leak → MI.
/// Returns the leak; the caller builds the final spec with it.
pub fn leak_for_target_mi(
    spec: &SynthSpec,
    target: f64,
    n_mc: usize,
    tol: f64,
) -> Result<f64, SynthError> {
    spec.validate()?;
    if !(tol.is_finite() && tol > 0.0) {
        return Err(SynthError::BadSpec(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let mi_at = |leak: f64| -> Result<f64, SynthError> {
        let mut probe = spec.clone();
        probe.leak = leak;
        Ok(true_mi(&probe, n_mc)?.nats)
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mi_lo = mi_at(1.0)?; // MI at leak = 1 (the lower end of the range)
    let mi_hi = mi_at(0.0)?; // MI at leak = 0 (the upper end)
    if target > mi_hi + tol || target < mi_lo - tol {
        return Err(SynthError::TargetOutOfRange {
            target,
            lo: mi_lo,
            hi: mi_hi,
        });
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let mi = mi_at(mid)?;
        if (mi - target).abs() <= tol {
            return Ok(mid);
        }
        if mi > target {
            lo = mid; // MI too high: leak more
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_tone_spec(separation: f64) -> SynthSpec {
        SynthSpec {
            n_tones: 2,
            tone_means: vec![
                [separation, 0.0, 0.0, 0.0],
                [-separation, 0.0, 0.0, 0.0],
            ],
            tone_stddevs: vec![[1.0; VECTOR_DIM]; 2],
            lexicon_size: 4,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn well_separated_two_tone_mi_is_ln_two() {
        let oracle = true_mi(&two_tone_spec(10.0), 50_000).unwrap();
        assert_abs_diff_eq!(oracle.nats, std::f64::consts::LN_2, epsilon = 0.01);
        assert!(oracle.stderr < 0.01);
    }

    #[test]
    fn identical_tone_components_have_zero_mi_to_rounding() {
        // Four tones with identical distributions: every pointwise
        // log-ratio cancels analytically, so the only residue is float
        // rounding inside log-sum-exp — far below any statistical scale.
        let spec = SynthSpec {
            n_tones: 4,
            tone_means: vec![[1.5, -0.5, 0.0, 2.0]; 4],
            tone_stddevs: vec![[0.8; VECTOR_DIM]; 4],
            lexicon_size: 4,
            leak: 0.0,
            ..SynthSpec::default()
        };
        let oracle = true_mi(&spec, 10_000).unwrap();
        assert!(oracle.nats.abs() < 1e-12, "got {}", oracle.nats);
        assert!(oracle.stderr < 1e-12, "got {}", oracle.stderr);
    }

    #[test]
    fn full_leak_severs_the_word_pitch_link() {
        let mut spec = two_tone_spec(6.0);
        spec.leak = 1.0;
        let oracle = true_mi(&spec, 50_000).unwrap();
        assert_abs_diff_eq!(oracle.nats, 0.0, epsilon = 0.01);
    }

    #[test]
    fn mi_respects_the_tone_count_bound() {
        let spec = SynthSpec::default(); // 4 well-separated tones
        let oracle = true_mi(&spec, 50_000).unwrap();
        assert!(
            oracle.nats <= (spec.n_tones as f64).ln() + 3.0 * oracle.stderr,
            "MI {} exceeds ln({})",
            oracle.nats,
            spec.n_tones
        );
        assert!(oracle.nats > 1.0, "4 separated tones should carry near ln 4");
    }

    #[test]
    fn mi_strictly_decreases_along_the_leak_grid() {
        let mut values = Vec::new();
        for leak in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let mut spec = two_tone_spec(5.0);
            spec.leak = leak;
            values.push(true_mi(&spec, 40_000).unwrap().nats);
        }
        for pair in values.windows(2) {
            assert!(
                pair[0] > pair[1],
                "MI must strictly decrease with leak: {values:?}"
            );
        }
    }

    #[test]
    fn generation_is_deterministic_and_consistent() {
        let spec = SynthSpec {
            n_sentences: 20,
            tokens_per_sentence: 5,
            ..SynthSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.cache, b.cache);
        assert_eq!(a.embeddings, b.embeddings);

        assert_eq!(a.corpus.utterances.len(), 20);
        assert_eq!(a.corpus.n_tokens(), 100);
        assert_eq!(a.cache.len(), 100);
        assert_eq!(a.embeddings.dim(), spec.lexicon_size);

        // Every token has a cached vector under its utterance id and index.
        for utt in &a.corpus.utterances {
            for word in &utt.words {
                assert!(a.cache.get(&utt.utterance_id, word.index).is_some());
            }
        }
    }

    #[test]
    fn tokens_follow_their_words_tone_when_leak_is_zero() {
        let spec = SynthSpec {
            n_tones: 2,
            tone_means: vec![[8.0, 0.0, 0.0, 0.0], [-8.0, 0.0, 0.0, 0.0]],
            tone_stddevs: vec![[1.0; VECTOR_DIM]; 2],
            lexicon_size: 2,
            leak: 0.0,
            n_sentences: 100,
            tokens_per_sentence: 5,
            ..SynthSpec::default()
        };
        let synth = generate(&spec).unwrap();
        for utt in &synth.corpus.utterances {
            for word in &utt.words {
                let vector = synth.cache.get(&utt.utterance_id, word.index).unwrap();
                let expected_sign = if word.form == "w0000" { 1.0 } else { -1.0 };
                assert!(
                    vector.0[0] * expected_sign > 0.0,
                    "token of {} landed at {:?}",
                    word.form,
                    vector.0
                );
            }
        }
    }

    #[test]
    fn weighted_words_skew_the_frequency_distribution() {
        let spec = SynthSpec {
            lexicon_size: 2,
            n_tones: 2,
            tone_means: standard_tone_means(2, 4.0),
            tone_stddevs: vec![[1.0; VECTOR_DIM]; 2],
            word_weights: Some(vec![9.0, 1.0]),
            n_sentences: 200,
            tokens_per_sentence: 10,
            ..SynthSpec::default()
        };
        let synth = generate(&spec).unwrap();
        let freq = crate::corpus::word_frequencies(&synth.corpus);
        let heavy = *freq.get("w0000").unwrap() as f64;
        let light = *freq.get("w0001").unwrap() as f64;
        let ratio = heavy / (heavy + light);
        assert!(
            (ratio - 0.9).abs() < 0.03,
            "expected ≈90% heavy-word tokens, got {ratio}"
        );
    }

    #[test]
    fn generated_manifest_and_cache_round_trip() {
        use crate::corpus::{load_manifest_with, save_manifest, ManifestOptions};

        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n_sentences: 10,
            tokens_per_sentence: 4,
            ..SynthSpec::default()
        };
        let synth = generate(&spec).unwrap();

        let manifest = dir.path().join("synth.jsonl");
        save_manifest(&synth.corpus, &manifest).unwrap();
        let options = ManifestOptions {
            require_pitch_source: false,
            ..ManifestOptions::default()
        };
        assert_eq!(load_manifest_with(&manifest, &options).unwrap(), synth.corpus);

        let cache_path = dir.path().join("synth.pv");
        synth.cache.save(&cache_path).unwrap();
        assert_eq!(ProsodyCache::load(&cache_path).unwrap(), synth.cache);
    }

    #[test]
    fn leak_bisection_hits_a_target_mi() {
        let spec = two_tone_spec(6.0);
        let leak = leak_for_target_mi(&spec, 0.35, 20_000, 0.005).unwrap();
        let mut tuned = spec.clone();
        tuned.leak = leak;
        let oracle = true_mi(&tuned, 50_000).unwrap();
        assert_abs_diff_eq!(oracle.nats, 0.35, epsilon = 0.02);

        assert!(matches!(
            leak_for_target_mi(&spec, 5.0, 20_000, 0.005),
            Err(SynthError::TargetOutOfRange { .. })
        ));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut bad = SynthSpec::default();
        bad.tone_stddevs[0][2] = 0.0;
        assert!(matches!(generate(&bad), Err(SynthError::BadSpec(_))));

        let bad_leak = SynthSpec {
            leak: 1.5,
            ..SynthSpec::default()
        };
        assert!(matches!(generate(&bad_leak), Err(SynthError::BadSpec(_))));

        let bad_weights = SynthSpec {
            word_weights: Some(vec![1.0; 3]),
            ..SynthSpec::default()
        };
        assert!(matches!(generate(&bad_weights), Err(SynthError::BadSpec(_))));

        assert!(matches!(
            true_mi(&SynthSpec::default(), 100),
            Err(SynthError::TooFewSamples { .. })
        ));
    }
}
