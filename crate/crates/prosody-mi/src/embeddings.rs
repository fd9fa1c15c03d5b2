//! Conditioning vectors for the mixture-density network: static per-word
//! embeddings loaded from the common text vector format, and precomputed
//! per-token contextual embeddings keyed to corpus positions.
//!
//! Static tables use the `.vec` convention: a header line `count dim`
//! followed by one line per word (`token v₁ … v_dim`). Context stores are
//! line-delimited JSON records `{utterance_id, word_index,
//! n_subword_tokens, vector}` produced by an external encoder; the loader
//! checks every key against the corpus and reports coverage.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;

/// Errors from embedding files and referential checks.
#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("vector for {word:?} has dimension {got}, table expects {expected}")]
    DimMismatch {
        word: String,
        expected: usize,
        got: usize,
    },
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error(
        "context entry ({utterance_id:?}, {word_index}) does not reference a corpus token"
    )]
    UnknownToken {
        utterance_id: String,
        word_index: usize,
    },
    #[error("duplicate context entry for ({utterance_id:?}, {word_index})")]
    DuplicateEntry {
        utterance_id: String,
        word_index: usize,
    },
    #[error("token {0:?} contains whitespace and cannot be written to a vector file")]
    UnwritableToken(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Static word vectors
// ---------------------------------------------------------------------------

/// A static word → vector table with a fixed dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    /// Creates an empty table of the given dimension.
    pub fn new(dim: usize) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        Ok(Self {
            dim,
            vectors: BTreeMap::new(),
        })
    }

    /// A one-hot table over a word list: dimension = word count, and the
    /// i-th word maps to the i-th standard basis vector.
    pub fn one_hot(words: &[String]) -> Result<Self, EmbeddingError> {
        let mut table = Self::new(words.len())?;
        for (i, word) in words.iter().enumerate() {
            let mut v = vec![0.0; words.len()];
            v[i] = 1.0;
            table.insert(word, v)?;
        }
        Ok(table)
    }

    /// Inserts or replaces a word's vector.
    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<(), EmbeddingError> {
        if vector.len() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                word: word.to_string(),
                expected: self.dim,
                got: vector.len(),
            });
        }
        self.vectors.insert(word.to_string(), vector);
        Ok(())
    }

    /// Vector dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored words.
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    /// True when no words are stored.
    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Whether a word (exact, case-sensitive match) is present.
    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(word)
    }

    /// Iterates `(word, vector)` in sorted word order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(w, v)| (w.as_str(), v.as_slice()))
    }
}

/// Exact-match lookup with a zero-vector out-of-vocabulary policy: present
/// words return `(vector, true)`, absent words `(zeros, false)`. Matching
/// is case-sensitive, and the call never fails.
pub fn lookup(table: &EmbeddingTable, word: &str) -> (Vec<f64>, bool) {
    match table.vectors.get(word) {
        Some(v) => (v.clone(), true),
        None => (vec![0.0; table.dim], false),
    }
}

/// A loaded static table plus how many duplicate rows were overwritten
/// (last occurrence wins; callers may surface this as a warning).
#[derive(Clone, Debug)]
pub struct StaticVectorLoad {
    pub table: EmbeddingTable,
    pub n_duplicates: usize,
}

/// Loads a text vector file: header `count dim`, then one `token v₁ … v_d`
/// line per word. The declared count and dimension are validated against
/// the contents; duplicate tokens keep the last occurrence.
pub fn load_static_vectors(path: &Path) -> Result<StaticVectorLoad, EmbeddingError> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let parse_err = |line: usize, message: String| EmbeddingError::Parse {
        path: display.clone(),
        line,
        message,
    };

    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".to_string()))?;
    let header_fields: Vec<&str> = header.split_whitespace().collect();
    if header_fields.len() != 2 {
        return Err(parse_err(
            1,
            format!("header must be \"count dim\", got {header:?}"),
        ));
    }
    let count: usize = header_fields[0]
        .parse()
        .map_err(|e| parse_err(1, format!("bad count: {e}")))?;
    let dim: usize = header_fields[1]
        .parse()
        .map_err(|e| parse_err(1, format!("bad dim: {e}")))?;
    if dim == 0 {
        return Err(parse_err(1, "dimension must be positive".to_string()));
    }

    let mut table = EmbeddingTable::new(dim)?;
    let mut rows = 0usize;
    let mut n_duplicates = 0usize;
    for (idx, raw) in lines {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != dim + 1 {
            return Err(parse_err(
                line_no,
                format!(
                    "expected a token and {dim} values, got {} fields",
                    fields.len()
                ),
            ));
        }
        let mut vector = Vec::with_capacity(dim);
        for (j, field) in fields[1..].iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|e| parse_err(line_no, format!("bad value {j}: {e}")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, format!("non-finite value {j}")));
            }
            vector.push(v);
        }
        if table.contains(fields[0]) {
            n_duplicates += 1;
        }
        table.insert(fields[0], vector)?;
        rows += 1;
    }
    if rows != count {
        return Err(parse_err(
            1,
            format!("header declares {count} rows but the file holds {rows}"),
        ));
    }
    Ok(StaticVectorLoad {
        table,
        n_duplicates,
    })
}

/// Writes a table in the text vector format, rows in sorted word order.
/// Values round-trip exactly through [`load_static_vectors`].
pub fn save_static_vectors(table: &EmbeddingTable, path: &Path) -> Result<(), EmbeddingError> {
    let mut out = String::new();
    writeln!(out, "{} {}", table.len(), table.dim()).expect("writing to a String cannot fail");
    for (word, vector) in table.iter() {
        if word.chars().any(char::is_whitespace) || word.is_empty() {
            return Err(EmbeddingError::UnwritableToken(word.to_string()));
        }
        out.push_str(word);
        for v in vector {
            write!(out, " {v}").expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Contextual per-token vectors
// ---------------------------------------------------------------------------

/// Which context the external encoder saw when producing a token's vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextKind {
    /// Left-to-right context only.
    Autoregressive,
    /// Full bidirectional context.
    Bidirectional,
}

/// One token's contextual embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextEntry {
    pub vector: Vec<f64>,
    pub n_subword_tokens: u32,
}

/// Precomputed contextual embeddings keyed by `(utterance_id, word_index)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextEmbeddingStore {
    dim: usize,
    context_kind: ContextKind,
    entries: BTreeMap<(String, usize), ContextEntry>,
}

impl ContextEmbeddingStore {
    /// Vector dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Context variant the vectors were produced under.
    pub fn context_kind(&self) -> ContextKind {
        self.context_kind
    }

    /// Number of stored token vectors.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// True when no vectors are stored.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The entry for a token, if the store covers it.
    pub fn get(&self, utterance_id: &str, word_index: usize) -> Option<&ContextEntry> {
        self.entries
            .get(&(utterance_id.to_string(), word_index))
    }

    /// Fraction of the corpus's tokens covered by this store.
    pub fn coverage(&self, corpus: &Corpus) -> f64 {
        let total = corpus.n_tokens();
        if total == 0 {
            return 0.0;
        }
        let covered = corpus
            .tokens()
            .filter(|(u, w)| self.get(&u.utterance_id, w.index).is_some())
            .count();
        covered as f64 / total as f64
    }
}

/// On-disk shape of one context-store line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextRecord {
    utterance_id: String,
    word_index: usize,
    n_subword_tokens: u32,
    vector: Vec<f64>,
}

/// A loaded context store with its corpus coverage.
#[derive(Clone, Debug)]
pub struct ContextStoreLoad {
    pub store: ContextEmbeddingStore,
    /// Fraction of corpus tokens the store covers. Uncovered tokens are
    /// excluded from model datasets by the callers that assemble them.
    pub coverage: f64,
}

/// Loads a line-delimited context store and validates it against a corpus:
/// every entry must reference an existing token, dimensions must agree,
/// and duplicate keys are rejected. Each entry's subword count is
/// propagated onto the matching corpus token so token filtering can use it.
pub fn load_context_store(
    path: &Path,
    corpus: &mut Corpus,
    context_kind: ContextKind,
) -> Result<ContextStoreLoad, EmbeddingError> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let parse_err = |line: usize, message: String| EmbeddingError::Parse {
        path: display.clone(),
        line,
        message,
    };

    let mut entries: BTreeMap<(String, usize), ContextEntry> = BTreeMap::new();
    let mut dim: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: ContextRecord =
            serde_json::from_str(raw).map_err(|e| parse_err(line_no, e.to_string()))?;
        if record.vector.is_empty() || record.vector.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(
                line_no,
                "vector is empty or contains non-finite values".to_string(),
            ));
        }
        match dim {
            None => dim = Some(record.vector.len()),
            Some(d) if d != record.vector.len() => {
                return Err(parse_err(
                    line_no,
                    format!("vector dimension {} conflicts with {d}", record.vector.len()),
                ));
            }
            Some(_) => {}
        }
        let key = (record.utterance_id.clone(), record.word_index);
        if entries.contains_key(&key) {
            return Err(EmbeddingError::DuplicateEntry {
                utterance_id: record.utterance_id,
                word_index: record.word_index,
            });
        }
        entries.insert(
            key,
            ContextEntry {
                vector: record.vector,
                n_subword_tokens: record.n_subword_tokens,
            },
        );
    }
    let dim = dim.ok_or_else(|| parse_err(1, "store holds no entries".to_string()))?;

    // Referential integrity: every entry names a real token.
    for (utterance_id, word_index) in entries.keys() {
        let exists = corpus.utterances.iter().any(|u| {
            u.utterance_id == *utterance_id && *word_index < u.words.len()
        });
        if !exists {
            return Err(EmbeddingError::UnknownToken {
                utterance_id: utterance_id.clone(),
                word_index: *word_index,
            });
        }
    }

    // Propagate subword counts onto the corpus tokens the store covers.
    for utterance in &mut corpus.utterances {
        for word in &mut utterance.words {
            if let Some(entry) = entries.get(&(utterance.utterance_id.clone(), word.index)) {
                word.n_subword_tokens = Some(entry.n_subword_tokens);
            }
        }
    }

    let store = ContextEmbeddingStore {
        dim,
        context_kind,
        entries,
    };
    let coverage = store.coverage(corpus);
    Ok(ContextStoreLoad { store, coverage })
}

/// Writes a context store in the line-delimited format, entries in sorted
/// key order; the result round-trips through [`load_context_store`].
pub fn save_context_store(
    store: &ContextEmbeddingStore,
    path: &Path,
) -> Result<(), EmbeddingError> {
    let mut out = String::new();
    for ((utterance_id, word_index), entry) in &store.entries {
        let record = ContextRecord {
            utterance_id: utterance_id.clone(),
            word_index: *word_index,
            n_subword_tokens: entry.n_subword_tokens,
            vector: entry.vector.clone(),
        };
        let json = serde_json::to_string(&record).expect("record fields always serialize");
        writeln!(out, "{json}").expect("writing to a String cannot fail");
    }
    std::fs::write(path, out)?;
    Ok(())
}
