//! Word-aligned speech corpora: manifest ingestion, utterance-level splits,
//! word frequencies, and token filtering.
//!
//! A corpus manifest is a line-delimited text file with one JSON record per
//! utterance, so large corpora stream without a full-document parse:
//!
//! ```json
//! {"utterance_id": "u1", "language": "ZH", "speaker_id": "s1",
//!  "text": "ni hao", "audio_ref": "u1.wav",
//!  "words": [{"form": "ni", "start_s": 0.10, "end_s": 0.32},
//!            {"form": "hao", "start_s": 0.32, "end_s": 0.61}]}
//! ```
//!
//! Records may carry optional `f0_ref`, `prosodic_type`, and
//! `tokenization_scheme` fields, and words an optional `n_subword_tokens`
//! count. When a record does not name its prosodic type, the loader falls
//! back to the built-in classification of the ten standard language tags
//! (DE, EN, FR, IT = stress-accent; JA, SV = pitch-accent; VI, TH, YUE,
//! ZH = tonal) and finally to [`ManifestOptions::default_prosodic_type`].

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors produced while loading, validating, or transforming corpora.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: utterance {utterance_id:?}: {message}")]
    Row {
        path: String,
        line: usize,
        utterance_id: String,
        message: String,
    },
    #[error("corpus is empty")]
    Empty,
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    BadTrainFrac(f64),
    #[error("cannot sample {requested} utterances from a corpus of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error(
        "utterance {utterance_id:?} word {word_index} ({form:?}) has no n_subword_tokens \
         annotation required for token filtering"
    )]
    MissingSubwordCount {
        utterance_id: String,
        word_index: usize,
        form: String,
    },
    #[error("id {0:?} contains characters that cannot be serialized")]
    UnwritableId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Typological class of a language's lexical pitch usage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProsodicType {
    /// Pitch serves stress and intonation, not lexical identity.
    StressAccent,
    /// Pitch is lexically contrastive on some words.
    PitchAccent,
    /// Pitch contours distinguish lexical items throughout.
    Tonal,
}

impl ProsodicType {
    /// Canonical increasing order of the lexical role of pitch, used as the
    /// a-priori ordering of the trend test.
    pub const ORDERED: [ProsodicType; 3] = [
        ProsodicType::StressAccent,
        ProsodicType::PitchAccent,
        ProsodicType::Tonal,
    ];

    /// Stable lowercase label used in CSV output and chart legends.
    pub fn label(&self) -> &'static str {
        match self {
            ProsodicType::StressAccent => "stress-accent",
            ProsodicType::PitchAccent => "pitch-accent",
            ProsodicType::Tonal => "tonal",
        }
    }

    /// Built-in classification of the ten standard language tags; `None`
    /// for tags outside that set.
    pub fn for_language_tag(tag: &str) -> Option<ProsodicType> {
        match tag.to_ascii_uppercase().as_str() {
            "DE" | "EN" | "FR" | "IT" => Some(ProsodicType::StressAccent),
            "JA" | "SV" => Some(ProsodicType::PitchAccent),
            "VI" | "TH" | "YUE" | "ZH" => Some(ProsodicType::Tonal),
            _ => None,
        }
    }
}

impl std::fmt::Display for ProsodicType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for ProsodicType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stress-accent" => Ok(ProsodicType::StressAccent),
            "pitch-accent" => Ok(ProsodicType::PitchAccent),
            "tonal" => Ok(ProsodicType::Tonal),
            other => Err(format!(
                "unknown prosodic type {other:?} (expected stress-accent, pitch-accent, or tonal)"
            )),
        }
    }
}

/// Granularity of the alignment units in a corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizationScheme {
    /// Orthographic words.
    #[default]
    Word,
    /// Single characters (used for languages written without word spacing).
    Character,
}

/// One aligned word occurrence inside an utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordToken {
    /// Orthographic form (or character, under the character scheme).
    pub form: String,
    /// Span start in seconds.
    pub start_s: f64,
    /// Span end in seconds.
    pub end_s: f64,
    /// Position within the utterance, assigned at load time.
    pub index: usize,
    /// Subword-unit count from an external tokenizer, for token filtering.
    pub n_subword_tokens: Option<u32>,
}

/// One utterance: metadata plus its ordered word alignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub utterance_id: String,
    pub language: String,
    pub speaker_id: String,
    pub text: String,
    pub words: Vec<WordToken>,
    /// Path to the waveform, relative to the manifest.
    pub audio_ref: Option<String>,
    /// Path to a precomputed f0 track, relative to the manifest.
    pub f0_ref: Option<String>,
}

/// An immutable word-aligned corpus in a single language.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub language: String,
    pub prosodic_type: ProsodicType,
    pub tokenization_scheme: TokenizationScheme,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    /// Total number of word tokens across all utterances.
    pub fn n_tokens(&self) -> usize {
        self.utterances.iter().map(|u| u.words.len()).sum()
    }

    /// Iterates `(utterance, word)` pairs in corpus order.
    pub fn tokens(&self) -> impl Iterator<Item = (&Utterance, &WordToken)> {
        self.utterances
            .iter()
            .flat_map(|u| u.words.iter().map(move |w| (u, w)))
    }
}

/// Loader behavior that the manifest format itself does not pin down.
#[derive(Clone, Debug)]
pub struct ManifestOptions {
    /// Require every utterance to reference audio or an f0 track. Disable
    /// when pitch data arrives through a prosody-vector cache instead.
    pub require_pitch_source: bool,
    /// Prosodic type for records that neither declare one nor use a
    /// standard language tag.
    pub default_prosodic_type: ProsodicType,
    /// Tokenization scheme for records that do not declare one.
    pub default_tokenization_scheme: TokenizationScheme,
}

impl Default for ManifestOptions {
    fn default() -> Self {
        Self {
            require_pitch_source: true,
            default_prosodic_type: ProsodicType::StressAccent,
            default_tokenization_scheme: TokenizationScheme::Word,
        }
    }
}

/// On-disk shape of one manifest line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    utterance_id: String,
    language: String,
    speaker_id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audio_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f0_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prosodic_type: Option<ProsodicType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokenization_scheme: Option<TokenizationScheme>,
    words: Vec<ManifestWord>,
}

/// On-disk shape of one aligned word.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestWord {
    form: String,
    start_s: f64,
    end_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_subword_tokens: Option<u32>,
}

/// Loads a manifest with default [`ManifestOptions`].
pub fn load_manifest(path: &Path) -> Result<Corpus, CorpusError> {
    load_manifest_with(path, &ManifestOptions::default())
}

/// Loads and fully validates a line-delimited corpus manifest.
///
/// Every invariant is checked with row-numbered diagnostics: word spans must
/// be positive-length, ordered, and non-overlapping; utterance ids must be
/// unique; all records must agree on language, prosodic type, and
/// tokenization scheme; and (unless relaxed) each utterance needs an audio
/// or f0 reference.
pub fn load_manifest_with(path: &Path, options: &ManifestOptions) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();

    let mut utterances = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut language: Option<String> = None;
    let mut prosodic_type: Option<ProsodicType> = None;
    let mut scheme: Option<TokenizationScheme> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(raw).map_err(|e| CorpusError::Parse {
                path: display.clone(),
                line,
                message: e.to_string(),
            })?;
        let row_err = |message: String| CorpusError::Row {
            path: display.clone(),
            line,
            utterance_id: record.utterance_id.clone(),
            message,
        };

        if record.utterance_id.is_empty() {
            return Err(row_err("empty utterance_id".to_string()));
        }
        if !seen_ids.insert(record.utterance_id.clone()) {
            return Err(row_err("duplicate utterance_id".to_string()));
        }
        if record.language.is_empty() {
            return Err(row_err("empty language tag".to_string()));
        }
        match &language {
            None => language = Some(record.language.clone()),
            Some(l) if *l != record.language => {
                return Err(row_err(format!(
                    "language {:?} conflicts with {:?} from earlier records; \
                     a corpus holds a single language",
                    record.language, l
                )));
            }
            Some(_) => {}
        }

        // Prosodic type: explicit field wins, then the standard-tag table,
        // then the loader default. Explicit values that contradict the
        // standard table are rejected rather than silently accepted.
        let tag_type = ProsodicType::for_language_tag(&record.language);
        let record_type = match (record.prosodic_type, tag_type) {
            (Some(explicit), Some(known)) if explicit != known => {
                return Err(row_err(format!(
                    "prosodic_type {} contradicts the standard classification of \
                     language tag {:?} ({})",
                    explicit.label(),
                    record.language,
                    known.label()
                )));
            }
            (Some(explicit), _) => explicit,
            (None, Some(known)) => known,
            (None, None) => options.default_prosodic_type,
        };
        match prosodic_type {
            None => prosodic_type = Some(record_type),
            Some(t) if t != record_type => {
                return Err(row_err(format!(
                    "prosodic_type {} conflicts with {} from earlier records",
                    record_type.label(),
                    t.label()
                )));
            }
            Some(_) => {}
        }

        let record_scheme = record
            .tokenization_scheme
            .unwrap_or(options.default_tokenization_scheme);
        match scheme {
            None => scheme = Some(record_scheme),
            Some(s) if s != record_scheme => {
                return Err(row_err(
                    "tokenization_scheme conflicts with earlier records".to_string(),
                ));
            }
            Some(_) => {}
        }

        if options.require_pitch_source && record.audio_ref.is_none() && record.f0_ref.is_none() {
            return Err(row_err(
                "utterance has neither audio_ref nor f0_ref".to_string(),
            ));
        }
        if record.words.is_empty() {
            return Err(row_err("utterance has no aligned words".to_string()));
        }

        let mut words = Vec::with_capacity(record.words.len());
        let mut prev_end = f64::NEG_INFINITY;
        for (w_idx, w) in record.words.into_iter().enumerate() {
            if w.form.is_empty() {
                return Err(row_err(format!("word {w_idx} has an empty form")));
            }
            if !(w.start_s.is_finite() && w.end_s.is_finite()) || w.start_s < 0.0 {
                return Err(row_err(format!(
                    "word {w_idx} ({:?}) has invalid span [{}, {}]",
                    w.form, w.start_s, w.end_s
                )));
            }
            if w.end_s <= w.start_s {
                return Err(row_err(format!(
                    "word {w_idx} ({:?}) has end_s {} ≤ start_s {}",
                    w.form, w.end_s, w.start_s
                )));
            }
            if w.start_s < prev_end {
                return Err(row_err(format!(
                    "word {w_idx} ({:?}) starts at {} before the previous word ends at {}",
                    w.form, w.start_s, prev_end
                )));
            }
            prev_end = w.end_s;
            words.push(WordToken {
                form: w.form,
                start_s: w.start_s,
                end_s: w.end_s,
                index: w_idx,
                n_subword_tokens: w.n_subword_tokens,
            });
        }

        utterances.push(Utterance {
            utterance_id: record.utterance_id,
            language: record.language,
            speaker_id: record.speaker_id,
            text: record.text,
            words,
            audio_ref: record.audio_ref,
            f0_ref: record.f0_ref,
        });
    }

    if utterances.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(Corpus {
        language: language.expect("non-empty corpus has a language"),
        prosodic_type: prosodic_type.expect("non-empty corpus has a prosodic type"),
        tokenization_scheme: scheme.expect("non-empty corpus has a scheme"),
        utterances,
    })
}

/// Writes a corpus back to the line-delimited manifest format. Re-loading
/// the file (with `require_pitch_source` off) yields an equal corpus.
pub fn save_manifest(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut out = String::new();
    for utt in &corpus.utterances {
        let record = ManifestRecord {
            utterance_id: utt.utterance_id.clone(),
            language: utt.language.clone(),
            speaker_id: utt.speaker_id.clone(),
            text: utt.text.clone(),
            audio_ref: utt.audio_ref.clone(),
            f0_ref: utt.f0_ref.clone(),
            prosodic_type: Some(corpus.prosodic_type),
            tokenization_scheme: Some(corpus.tokenization_scheme),
            words: utt
                .words
                .iter()
                .map(|w| ManifestWord {
                    form: w.form.clone(),
                    start_s: w.start_s,
                    end_s: w.end_s,
                    n_subword_tokens: w.n_subword_tokens,
                })
                .collect(),
        };
        let json = serde_json::to_string(&record)
            .map_err(|e| CorpusError::UnwritableId(e.to_string()))?;
        writeln!(out, "{json}").expect("writing to a String cannot fail");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Splits a corpus into train / held-out portions at the utterance level.
///
/// The partition is deterministic given the seed: the utterance set is
/// shuffled, the first `round(train_frac * n)` (clamped so both sides are
/// non-empty when `n ≥ 2`) go to train, and each side keeps the original
/// utterance order.
pub fn split_corpus(
    corpus: &Corpus,
    train_frac: f64,
    seed: u64,
) -> Result<(Corpus, Corpus), CorpusError> {
    if corpus.utterances.is_empty() {
        return Err(CorpusError::Empty);
    }
    if !(train_frac.is_finite() && 0.0 < train_frac && train_frac < 1.0) {
        return Err(CorpusError::BadTrainFrac(train_frac));
    }
    let n = corpus.utterances.len();
    let n_train = if n == 1 {
        1
    } else {
        ((train_frac * n as f64).round() as usize).clamp(1, n - 1)
    };

    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let train_set: HashSet<usize> = indices[..n_train].iter().copied().collect();

    let mut train = Vec::with_capacity(n_train);
    let mut held = Vec::with_capacity(n - n_train);
    for (i, utt) in corpus.utterances.iter().enumerate() {
        if train_set.contains(&i) {
            train.push(utt.clone());
        } else {
            held.push(utt.clone());
        }
    }
    let make = |utterances: Vec<Utterance>| Corpus {
        language: corpus.language.clone(),
        prosodic_type: corpus.prosodic_type,
        tokenization_scheme: corpus.tokenization_scheme,
        utterances,
    };
    Ok((make(train), make(held)))
}

/// Draws a seeded uniform sample of `n` utterances without replacement,
/// keeping the original utterance order.
pub fn sample_utterances(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus, CorpusError> {
    let total = corpus.utterances.len();
    if n > total {
        return Err(CorpusError::SampleTooLarge {
            requested: n,
            available: total,
        });
    }
    let mut indices: Vec<usize> = (0..total).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let mut keep: Vec<usize> = indices[..n].to_vec();
    keep.sort_unstable();
    Ok(Corpus {
        language: corpus.language.clone(),
        prosodic_type: corpus.prosodic_type,
        tokenization_scheme: corpus.tokenization_scheme,
        utterances: keep
            .into_iter()
            .map(|i| corpus.utterances[i].clone())
            .collect(),
    })
}

/// Occurrence count per word form, in sorted order. Counts sum to the
/// corpus token count.
pub fn word_frequencies(corpus: &Corpus) -> BTreeMap<String, usize> {
    let mut freq = BTreeMap::new();
    for (_, word) in corpus.tokens() {
        *freq.entry(word.form.clone()).or_insert(0) += 1;
    }
    freq
}

/// Result of [`filter_max_tokens`]: the filtered corpus plus how much of the
/// original token mass survived.
#[derive(Clone, Debug)]
pub struct FilteredCorpus {
    pub corpus: Corpus,
    pub retained_tokens: usize,
    pub total_tokens: usize,
}

impl FilteredCorpus {
    /// Fraction of word tokens retained by the filter.
    pub fn retained_ratio(&self) -> f64 {
        if self.total_tokens == 0 {
            return 0.0;
        }
        self.retained_tokens as f64 / self.total_tokens as f64
    }
}

/// Keeps only word tokens whose subword count is at most `k`.
///
/// Every token must carry an `n_subword_tokens` annotation. Utterances left
/// without words are dropped, and surviving words are re-indexed within
/// their utterance; downstream consumers keyed on original `(utterance_id,
/// word_index)` pairs should filter at dataset-assembly time instead.
pub fn filter_max_tokens(corpus: &Corpus, k: u32) -> Result<FilteredCorpus, CorpusError> {
    let total_tokens = corpus.n_tokens();
    for (utt, word) in corpus.tokens() {
        if word.n_subword_tokens.is_none() {
            return Err(CorpusError::MissingSubwordCount {
                utterance_id: utt.utterance_id.clone(),
                word_index: word.index,
                form: word.form.clone(),
            });
        }
    }

    let mut retained_tokens = 0usize;
    let mut utterances = Vec::new();
    for utt in &corpus.utterances {
        let mut words: Vec<WordToken> = utt
            .words
            .iter()
            .filter(|w| w.n_subword_tokens.expect("checked above") <= k)
            .cloned()
            .collect();
        if words.is_empty() {
            continue;
        }
        retained_tokens += words.len();
        for (i, w) in words.iter_mut().enumerate() {
            w.index = i;
        }
        let mut kept = utt.clone();
        kept.words = words;
        utterances.push(kept);
    }
    Ok(FilteredCorpus {
        corpus: Corpus {
            language: corpus.language.clone(),
            prosodic_type: corpus.prosodic_type,
            tokenization_scheme: corpus.tokenization_scheme,
            utterances,
        },
        retained_tokens,
        total_tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word(form: &str, start: f64, end: f64, n_sub: Option<u32>) -> WordToken {
        WordToken {
            form: form.to_string(),
            start_s: start,
            end_s: end,
            index: 0,
            n_subword_tokens: n_sub,
        }
    }

    fn utterance(id: &str, language: &str, forms: &[(&str, Option<u32>)]) -> Utterance {
        let words = forms
            .iter()
            .enumerate()
            .map(|(i, (form, n_sub))| WordToken {
                index: i,
                ..word(form, i as f64 * 0.5, i as f64 * 0.5 + 0.4, *n_sub)
            })
            .collect();
        Utterance {
            utterance_id: id.to_string(),
            language: language.to_string(),
            speaker_id: "spk".to_string(),
            text: forms.iter().map(|(f, _)| *f).collect::<Vec<_>>().join(" "),
            words,
            audio_ref: Some(format!("{id}.wav")),
            f0_ref: None,
        }
    }

    fn corpus(language: &str, utts: Vec<Utterance>) -> Corpus {
        Corpus {
            language: language.to_string(),
            prosodic_type: ProsodicType::for_language_tag(language)
                .unwrap_or(ProsodicType::StressAccent),
            tokenization_scheme: TokenizationScheme::Word,
            utterances: utts,
        }
    }

    #[test]
    fn load_manifest_ingests_words_and_classifies_language() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        std::fs::write(
            &path,
            r#"{"utterance_id":"u1","language":"ZH","speaker_id":"s1","text":"a b c","audio_ref":"u1.wav","words":[{"form":"a","start_s":0.0,"end_s":0.2},{"form":"b","start_s":0.2,"end_s":0.4},{"form":"c","start_s":0.5,"end_s":0.9}]}
"#,
        )
        .unwrap();
        let corpus = load_manifest(&path).unwrap();
        assert_eq!(corpus.utterances.len(), 1);
        assert_eq!(corpus.utterances[0].words.len(), 3);
        assert_eq!(corpus.prosodic_type, ProsodicType::Tonal);
        assert_eq!(corpus.n_tokens(), 3);
        assert_eq!(
            corpus.utterances[0].words[2],
            WordToken {
                form: "c".to_string(),
                start_s: 0.5,
                end_s: 0.9,
                index: 2,
                n_subword_tokens: None,
            }
        );
    }

    #[test]
    fn load_manifest_rejects_reversed_span_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            r#"{"utterance_id":"u7","language":"EN","speaker_id":"s","text":"x","audio_ref":"a.wav","words":[{"form":"x","start_s":0.9,"end_s":0.2}]}
"#,
        )
        .unwrap();
        let err = load_manifest(&path).unwrap_err();
        match err {
            CorpusError::Row {
                line,
                utterance_id,
                message,
                ..
            } => {
                assert_eq!(line, 1);
                assert_eq!(utterance_id, "u7");
                assert!(message.contains("end_s"), "message: {message}");
            }
            other => panic!("expected row error, got {other}"),
        }
    }

    #[test]
    fn load_manifest_rejects_overlap_duplicates_and_mixed_language() {
        let dir = tempfile::tempdir().unwrap();

        let overlap = dir.path().join("overlap.jsonl");
        std::fs::write(
            &overlap,
            r#"{"utterance_id":"u1","language":"EN","speaker_id":"s","text":"a b","audio_ref":"a.wav","words":[{"form":"a","start_s":0.0,"end_s":0.5},{"form":"b","start_s":0.3,"end_s":0.8}]}
"#,
        )
        .unwrap();
        assert!(matches!(
            load_manifest(&overlap),
            Err(CorpusError::Row { .. })
        ));

        let dup = dir.path().join("dup.jsonl");
        let row = r#"{"utterance_id":"u1","language":"EN","speaker_id":"s","text":"a","audio_ref":"a.wav","words":[{"form":"a","start_s":0.0,"end_s":0.5}]}"#;
        std::fs::write(&dup, format!("{row}\n{row}\n")).unwrap();
        assert!(matches!(load_manifest(&dup), Err(CorpusError::Row { .. })));

        let mixed = dir.path().join("mixed.jsonl");
        std::fs::write(
            &mixed,
            r#"{"utterance_id":"u1","language":"EN","speaker_id":"s","text":"a","audio_ref":"a.wav","words":[{"form":"a","start_s":0.0,"end_s":0.5}]}
{"utterance_id":"u2","language":"FR","speaker_id":"s","text":"b","audio_ref":"b.wav","words":[{"form":"b","start_s":0.0,"end_s":0.5}]}
"#,
        )
        .unwrap();
        assert!(matches!(load_manifest(&mixed), Err(CorpusError::Row { .. })));
    }

    #[test]
    fn load_manifest_rejects_contradictory_prosodic_type() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("contradict.jsonl");
        std::fs::write(
            &path,
            r#"{"utterance_id":"u1","language":"ZH","speaker_id":"s","text":"a","audio_ref":"a.wav","prosodic_type":"stress-accent","words":[{"form":"a","start_s":0.0,"end_s":0.5}]}
"#,
        )
        .unwrap();
        assert!(matches!(load_manifest(&path), Err(CorpusError::Row { .. })));
    }

    #[test]
    fn missing_pitch_source_is_rejected_unless_relaxed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nosrc.jsonl");
        std::fs::write(
            &path,
            r#"{"utterance_id":"u1","language":"EN","speaker_id":"s","text":"a","words":[{"form":"a","start_s":0.0,"end_s":0.5}]}
"#,
        )
        .unwrap();
        assert!(matches!(load_manifest(&path), Err(CorpusError::Row { .. })));

        let relaxed = ManifestOptions {
            require_pitch_source: false,
            ..ManifestOptions::default()
        };
        let corpus = load_manifest_with(&path, &relaxed).unwrap();
        assert_eq!(corpus.utterances.len(), 1);
    }

    #[test]
    fn manifest_round_trips_to_an_equal_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.jsonl");
        let original = corpus(
            "JA",
            vec![
                utterance("u1", "JA", &[("ame", Some(1)), ("hashi", Some(2))]),
                utterance("u2", "JA", &[("kaki", None)]),
            ],
        );
        save_manifest(&original, &path).unwrap();
        let reloaded = load_manifest(&path).unwrap();
        assert_eq!(original, reloaded);
    }

    #[test]
    fn split_corpus_partitions_seventy_thirty() {
        let utts: Vec<Utterance> = (0..10)
            .map(|i| utterance(&format!("u{i}"), "EN", &[("a", None)]))
            .collect();
        let c = corpus("EN", utts);
        let (train, held) = split_corpus(&c, 0.7, 1).unwrap();
        assert_eq!(train.utterances.len(), 7);
        assert_eq!(held.utterances.len(), 3);

        // Same seed reproduces the same partition; together they cover the input.
        let (train2, held2) = split_corpus(&c, 0.7, 1).unwrap();
        assert_eq!(train, train2);
        assert_eq!(held, held2);
        let mut ids: Vec<&str> = train
            .utterances
            .iter()
            .chain(&held.utterances)
            .map(|u| u.utterance_id.as_str())
            .collect();
        ids.sort_unstable();
        let mut expect: Vec<String> = (0..10).map(|i| format!("u{i}")).collect();
        expect.sort();
        assert_eq!(ids, expect.iter().map(String::as_str).collect::<Vec<_>>());
    }

    #[test]
    fn split_corpus_keeps_both_sides_non_empty() {
        let utts: Vec<Utterance> = (0..2)
            .map(|i| utterance(&format!("u{i}"), "EN", &[("a", None)]))
            .collect();
        let c = corpus("EN", utts);
        let (train, held) = split_corpus(&c, 0.5, 9).unwrap();
        assert_eq!((train.utterances.len(), held.utterances.len()), (1, 1));

        // Extreme fractions still leave one utterance on each side.
        let (train, held) = split_corpus(&c, 0.99, 9).unwrap();
        assert_eq!((train.utterances.len(), held.utterances.len()), (1, 1));
        assert!(matches!(
            split_corpus(&c, 1.0, 9),
            Err(CorpusError::BadTrainFrac(_))
        ));
    }

    #[test]
    fn word_frequencies_count_tokens() {
        let c = corpus(
            "EN",
            vec![utterance("u1", "EN", &[("a", None), ("b", None), ("a", None)])],
        );
        let freq = word_frequencies(&c);
        assert_eq!(freq.get("a"), Some(&2));
        assert_eq!(freq.get("b"), Some(&1));
        assert_eq!(freq.values().sum::<usize>(), c.n_tokens());

        let empty = corpus("EN", vec![]);
        assert!(word_frequencies(&empty).is_empty());
    }

    #[test]
    fn filter_max_tokens_keeps_only_small_words() {
        let c = corpus(
            "EN",
            vec![utterance(
                "u1",
                "EN",
                &[("a", Some(1)), ("bb", Some(2)), ("ccc", Some(3))],
            )],
        );
        let filtered = filter_max_tokens(&c, 2).unwrap();
        assert_eq!(filtered.retained_tokens, 2);
        assert_eq!(filtered.total_tokens, 3);
        assert!((filtered.retained_ratio() - 2.0 / 3.0).abs() < 1e-12);
        let forms: Vec<&str> = filtered
            .corpus
            .tokens()
            .map(|(_, w)| w.form.as_str())
            .collect();
        assert_eq!(forms, ["a", "bb"]);

        // k at or above the max count is the identity on token content.
        let all = filter_max_tokens(&c, 3).unwrap();
        assert_eq!(all.corpus, c);
        assert_eq!(all.retained_ratio(), 1.0);

        // k=1 keeps only single-unit words.
        let singles = filter_max_tokens(&c, 1).unwrap();
        assert_eq!(singles.retained_tokens, 1);
    }

    #[test]
    fn filter_max_tokens_requires_annotations() {
        let c = corpus("EN", vec![utterance("u1", "EN", &[("a", None)])]);
        assert!(matches!(
            filter_max_tokens(&c, 2),
            Err(CorpusError::MissingSubwordCount { .. })
        ));
    }

    #[test]
    fn sample_utterances_is_deterministic_and_bounded() {
        let utts: Vec<Utterance> = (0..20)
            .map(|i| utterance(&format!("u{i}"), "EN", &[("a", None)]))
            .collect();
        let c = corpus("EN", utts);
        let s1 = sample_utterances(&c, 5, 3).unwrap();
        let s2 = sample_utterances(&c, 5, 3).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.utterances.len(), 5);
        assert!(matches!(
            sample_utterances(&c, 21, 3),
            Err(CorpusError::SampleTooLarge { .. })
        ));
    }
}
