//! Gaussian kernel density models for pitch-vector distributions: the
//! unconditional density p(p), and the per-word conditional density p(p|w)
//! with occurrence-threshold backoff.
//!
//! A [`KdeModel`] is the average of isotropic Gaussians centered on its
//! training points. Bandwidths come from closed-form rules
//! ([`rule_bandwidth`]), from cross-validated selection over a candidate set
//! ([`select_bandwidth_cv`]), or are supplied directly.
//!
//! A [`ConditionalKdeModel`] fits one KDE per word form that reaches the
//! occurrence threshold λ and routes every other word to an unconditional
//! fallback KDE fit on all tokens. Because the fallback *is* the
//! unconditional model, a below-threshold token's conditional and
//! unconditional log-densities are bit-identical, so its pointwise MI
//! contribution is exactly zero.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::pitch::{ProsodyVector, VECTOR_DIM};

/// Errors from KDE fitting, bandwidth selection, and model serialization.
#[derive(Debug, Error)]
pub enum KdeError {
    #[error("cannot fit a density model on empty data")]
    EmptyData,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("bandwidth must be positive and finite, got {0}")]
    BadBandwidth(f64),
    #[error("bandwidth candidate list is empty")]
    NoCandidates,
    #[error("query has dimension {got}, model expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("data contains non-finite values")]
    NonFinite,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("model file {path}: {message}")]
    ModelFile { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Closed-form bandwidth rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// `σ̂ · n^(−1/(d+4))`.
    Scott,
    /// `σ̂ · (n(d+2)/4)^(−1/(d+4))`.
    Silverman,
}

/// Rule-of-thumb bandwidth from per-dimension standard deviations. The data
/// scale `σ̂` is the mean of the per-dimension sample standard deviations,
/// so rescaling the data rescales the bandwidth by the same factor.
pub fn rule_bandwidth_from_moments(
    per_dim_std: &[f64],
    n: usize,
    rule: BandwidthRule,
) -> Result<f64, KdeError> {
    if n < 2 {
        return Err(KdeError::TooFewPoints { needed: 2, got: n });
    }
    if per_dim_std.is_empty() || per_dim_std.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(KdeError::NonFinite);
    }
    let d = per_dim_std.len() as f64;
    let sigma = math::mean(per_dim_std);
    let nf = n as f64;
    let h = match rule {
        BandwidthRule::Scott => sigma * nf.powf(-1.0 / (d + 4.0)),
        BandwidthRule::Silverman => sigma * (nf * (d + 2.0) / 4.0).powf(-1.0 / (d + 4.0)),
    };
    if !(h.is_finite() && h > 0.0) {
        return Err(KdeError::BadBandwidth(h));
    }
    Ok(h)
}

/// Per-dimension sample standard deviations of a pitch-vector set.
fn per_dim_std(data: &[ProsodyVector]) -> [f64; VECTOR_DIM] {
    let mut out = [0.0; VECTOR_DIM];
    let mut column = Vec::with_capacity(data.len());
    for (j, slot) in out.iter_mut().enumerate() {
        column.clear();
        column.extend(data.iter().map(|v| v.0[j]));
        *slot = math::sample_std(&column);
    }
    out
}

/// Rule-of-thumb bandwidth for a pitch-vector dataset (d = 4).
pub fn rule_bandwidth(data: &[ProsodyVector], rule: BandwidthRule) -> Result<f64, KdeError> {
    rule_bandwidth_from_moments(&per_dim_std(data), data.len(), rule)
}

/// A Gaussian kernel density estimate: the average of isotropic Gaussians
/// `N(x_i, h²I)` over the stored training points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    dim: usize,
    /// Training points, flattened row-major (`n · dim` values).
    points: Vec<f64>,
    bandwidth: f64,
}

impl KdeModel {
    /// Builds a model over points of arbitrary dimension.
    pub fn from_rows(rows: &[Vec<f64>], bandwidth: f64) -> Result<Self, KdeError> {
        if rows.is_empty() {
            return Err(KdeError::EmptyData);
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(KdeError::BadBandwidth(bandwidth));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(KdeError::EmptyData);
        }
        let mut points = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(KdeError::DimMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(KdeError::NonFinite);
            }
            points.extend_from_slice(row);
        }
        Ok(Self {
            dim,
            points,
            bandwidth,
        })
    }

    /// Number of training points.
    pub fn n_points(&self) -> usize {
        self.points.len() / self.dim
    }

    /// Dimensionality of the density.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Kernel bandwidth.
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Log-density at a query point, in nats, computed with an
    /// overflow-safe log-sum-exp over kernel terms:
    /// `log (1/n) Σᵢ N(q | xᵢ, h²I)`.
    pub fn log_density(&self, query: &[f64]) -> Result<f64, KdeError> {
        if query.len() != self.dim {
            return Err(KdeError::DimMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let n = self.n_points();
        let inv_two_h2 = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let exponents: Vec<f64> = self
            .points
            .chunks_exact(self.dim)
            .map(|x| {
                let mut sq = 0.0;
                for (a, b) in x.iter().zip(query) {
                    let d = a - b;
                    sq += d * d;
                }
                -sq * inv_two_h2
            })
            .collect();
        let norm = -(self.dim as f64 / 2.0)
            * (2.0 * PI * self.bandwidth * self.bandwidth).ln();
        Ok(norm - (n as f64).ln() + math::log_sum_exp(&exponents))
    }

    /// Writes the model to a JSON file; values round-trip bit-exactly.
    pub fn save(&self, path: &Path) -> Result<(), KdeError> {
        write_model_json(self, path)
    }

    /// Reads a model written by [`Self::save`].
    pub fn load(path: &Path) -> Result<Self, KdeError> {
        read_model_json(path)
    }
}

fn write_model_json<T: Serialize>(model: &T, path: &Path) -> Result<(), KdeError> {
    let json = serde_json::to_string(model).map_err(|e| KdeError::ModelFile {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    std::fs::write(path, json)?;
    Ok(())
}

fn read_model_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, KdeError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| KdeError::ModelFile {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Fits a KDE on pitch vectors with the given bandwidth.
pub fn fit_kde(data: &[ProsodyVector], bandwidth: f64) -> Result<KdeModel, KdeError> {
    let rows: Vec<Vec<f64>> = data.iter().map(|v| v.0.to_vec()).collect();
    KdeModel::from_rows(&rows, bandwidth)
}

/// Log-density of a pitch vector under a KDE, in nats.
pub fn kde_log_density(model: &KdeModel, p: &ProsodyVector) -> f64 {
    model
        .log_density(&p.0)
        .expect("pitch-vector models always have dimension 4")
}

/// Log-densities of many pitch vectors, scored in parallel.
pub fn kde_log_densities(model: &KdeModel, queries: &[ProsodyVector]) -> Vec<f64> {
    queries
        .par_iter()
        .map(|q| kde_log_density(model, q))
        .collect()
}

/// Fixed candidate bandwidths tried alongside the closed-form rules during
/// cross-validated selection.
pub const DEFAULT_FIXED_BANDWIDTHS: [f64; 5] = [0.05, 0.1, 0.2, 0.5, 1.0];

/// The default candidate set: Scott's and Silverman's rules evaluated on
/// the data, plus [`DEFAULT_FIXED_BANDWIDTHS`].
pub fn default_bandwidth_candidates(data: &[ProsodyVector]) -> Result<Vec<f64>, KdeError> {
    let mut candidates = vec![
        rule_bandwidth(data, BandwidthRule::Scott)?,
        rule_bandwidth(data, BandwidthRule::Silverman)?,
    ];
    candidates.extend_from_slice(&DEFAULT_FIXED_BANDWIDTHS);
    Ok(candidates)
}

/// Selects the bandwidth maximizing mean held-out log-density under k-fold
/// cross-validation. Folds are a seeded random partition; ties go to the
/// smaller bandwidth; deterministic given the seed.
pub fn select_bandwidth_cv(
    data: &[ProsodyVector],
    candidates: &[f64],
    folds: usize,
    seed: u64,
) -> Result<f64, KdeError> {
    if candidates.is_empty() {
        return Err(KdeError::NoCandidates);
    }
    for &h in candidates {
        if !(h.is_finite() && h > 0.0) {
            return Err(KdeError::BadBandwidth(h));
        }
    }
    if folds < 2 {
        return Err(KdeError::BadConfig(format!(
            "cross-validation needs at least 2 folds, got {folds}"
        )));
    }
    if data.len() < folds {
        return Err(KdeError::TooFewPoints {
            needed: folds,
            got: data.len(),
        });
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut sorted: Vec<f64> = candidates.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("candidates are finite"));
    sorted.dedup();

    // One squared-distance pass per held-out point serves every candidate.
    let mut fold_means = vec![vec![0.0f64; folds]; sorted.len()];
    for fold in 0..folds {
        let held: Vec<usize> = order
            .iter()
            .copied()
            .skip(fold)
            .step_by(folds)
            .collect();
        let held_set: Vec<bool> = {
            let mut mask = vec![false; data.len()];
            for &i in &held {
                mask[i] = true;
            }
            mask
        };
        let train: Vec<&ProsodyVector> = (0..data.len())
            .filter(|&i| !held_set[i])
            .map(|i| &data[i])
            .collect();
        let n_train = train.len() as f64;

        // per_point[q][c] = log-density of held point q under candidate c.
        let per_point: Vec<Vec<f64>> = held
            .par_iter()
            .map(|&qi| {
                let q = &data[qi].0;
                let sq: Vec<f64> = train
                    .iter()
                    .map(|x| {
                        let mut acc = 0.0;
                        for (a, b) in x.0.iter().zip(q) {
                            let d = a - b;
                            acc += d * d;
                        }
                        acc
                    })
                    .collect();
                sorted
                    .iter()
                    .map(|&h| {
                        let inv_two_h2 = 1.0 / (2.0 * h * h);
                        let exponents: Vec<f64> =
                            sq.iter().map(|&s| -s * inv_two_h2).collect();
                        -(VECTOR_DIM as f64 / 2.0) * (2.0 * PI * h * h).ln() - n_train.ln()
                            + math::log_sum_exp(&exponents)
                    })
                    .collect()
            })
            .collect();

        for (c, means) in fold_means.iter_mut().enumerate() {
            let scores: Vec<f64> = per_point.iter().map(|row| row[c]).collect();
            means[fold] = math::mean(&scores);
        }
    }

    // Mean across folds per candidate; argmax with ties to the smaller
    // bandwidth (candidates are scanned in ascending order with strict >).
    let mut best = sorted[0];
    let mut best_score = f64::NEG_INFINITY;
    for (c, &h) in sorted.iter().enumerate() {
        let score = math::mean(&fold_means[c]);
        if score > best_score {
            best_score = score;
            best = h;
        }
    }
    Ok(best)
}

/// Whether a conditional model was fit on the full dataset or on a
/// dedicated training split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KdeMode {
    /// Bandwidth selection, fitting, and evaluation all share the dataset.
    All,
    /// Fitting uses a training fraction; evaluation uses the remainder.
    Split,
}

impl std::fmt::Display for KdeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KdeMode::All => write!(f, "all"),
            KdeMode::Split => write!(f, "split"),
        }
    }
}

/// Configuration for [`fit_conditional`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionalKdeConfig {
    /// Minimum occurrence count for a word to receive its own KDE.
    pub lambda: usize,
    /// Dataset handling: fit on everything, or split off a train fraction.
    pub mode: KdeMode,
    /// Fraction used for fitting in split mode.
    pub train_frac: f64,
    /// Seed for the split and for bandwidth cross-validation.
    pub seed: u64,
    /// Fixed bandwidth candidates added to the two closed-form rules.
    pub fixed_bandwidths: Vec<f64>,
    /// Folds for bandwidth cross-validation.
    pub cv_folds: usize,
    /// Select a bandwidth per word instead of reusing the global one.
    /// Per-word selection is unstable near the occurrence threshold, so the
    /// default shares the globally selected bandwidth.
    pub per_word_bandwidth: bool,
}

impl Default for ConditionalKdeConfig {
    fn default() -> Self {
        Self {
            lambda: 20,
            mode: KdeMode::Split,
            train_frac: 0.7,
            seed: 0,
            fixed_bandwidths: DEFAULT_FIXED_BANDWIDTHS.to_vec(),
            cv_folds: 10,
            per_word_bandwidth: false,
        }
    }
}

/// Per-word conditional density with occurrence-threshold backoff.
///
/// Words with a dedicated model are scored by it; every other word is
/// scored by the unconditional fallback, making its pointwise MI
/// contribution exactly zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalKdeModel {
    per_word: BTreeMap<String, KdeModel>,
    fallback: KdeModel,
    lambda: usize,
    mode: KdeMode,
}

impl ConditionalKdeModel {
    /// The unconditional fallback model (fit on all fitting tokens).
    pub fn fallback(&self) -> &KdeModel {
        &self.fallback
    }

    /// Occurrence threshold λ.
    pub fn lambda(&self) -> usize {
        self.lambda
    }

    /// How the fitting data was chosen.
    pub fn mode(&self) -> KdeMode {
        self.mode
    }

    /// Word forms that received a dedicated KDE.
    pub fn dedicated_words(&self) -> impl Iterator<Item = &str> {
        self.per_word.keys().map(String::as_str)
    }

    /// Whether a word form has its own KDE (false means backoff).
    pub fn has_dedicated(&self, word: &str) -> bool {
        self.per_word.contains_key(word)
    }

    /// Writes the model to a JSON file; values round-trip bit-exactly.
    pub fn save(&self, path: &Path) -> Result<(), KdeError> {
        write_model_json(self, path)
    }

    /// Reads a model written by [`Self::save`].
    pub fn load(path: &Path) -> Result<Self, KdeError> {
        read_model_json(path)
    }
}

/// A fitted conditional model plus the tokens reserved for evaluation:
/// the full input in [`KdeMode::All`], the held-out fraction in
/// [`KdeMode::Split`].
#[derive(Clone, Debug)]
pub struct ConditionalKdeFit {
    pub model: ConditionalKdeModel,
    pub eval_pairs: Vec<(String, ProsodyVector)>,
}

/// Fits a conditional model on exactly the given `(word, vector)` pairs,
/// recording `mode` as provenance. Callers that manage their own splits
/// (e.g. utterance-level partitions) use this directly; [`fit_conditional`]
/// wraps it with token-level split handling.
///
/// A single bandwidth is selected by cross-validation on all fitting
/// vectors and shared by the fallback and (by default) every per-word KDE.
pub fn fit_conditional_parts(
    fit_pairs: &[(String, ProsodyVector)],
    mode: KdeMode,
    config: &ConditionalKdeConfig,
) -> Result<ConditionalKdeModel, KdeError> {
    if fit_pairs.is_empty() {
        return Err(KdeError::EmptyData);
    }
    if config.lambda < 1 {
        return Err(KdeError::BadConfig(format!(
            "lambda must be at least 1, got {}",
            config.lambda
        )));
    }

    let vectors: Vec<ProsodyVector> = fit_pairs.iter().map(|(_, v)| *v).collect();
    let mut candidates = vec![
        rule_bandwidth(&vectors, BandwidthRule::Scott)?,
        rule_bandwidth(&vectors, BandwidthRule::Silverman)?,
    ];
    candidates.extend_from_slice(&config.fixed_bandwidths);
    let bandwidth = select_bandwidth_cv(&vectors, &candidates, config.cv_folds, config.seed)?;
    let fallback = fit_kde(&vectors, bandwidth)?;

    let mut by_word: BTreeMap<&str, Vec<ProsodyVector>> = BTreeMap::new();
    for (w, v) in fit_pairs {
        by_word.entry(w.as_str()).or_default().push(*v);
    }
    let mut per_word = BTreeMap::new();
    for (word, points) in by_word {
        if points.len() < config.lambda {
            continue;
        }
        let h = if config.per_word_bandwidth && points.len() >= 2 {
            let mut word_candidates = vec![
                rule_bandwidth(&points, BandwidthRule::Scott)?,
                rule_bandwidth(&points, BandwidthRule::Silverman)?,
            ];
            word_candidates.extend_from_slice(&config.fixed_bandwidths);
            let folds = config.cv_folds.min(points.len()).max(2);
            select_bandwidth_cv(&points, &word_candidates, folds, config.seed)?
        } else {
            bandwidth
        };
        per_word.insert(word.to_string(), fit_kde(&points, h)?);
    }

    Ok(ConditionalKdeModel {
        per_word,
        fallback,
        lambda: config.lambda,
        mode,
    })
}

/// Fits a conditional model from flat `(word, vector)` pairs.
///
/// In [`KdeMode::All`] the whole input is used for bandwidth selection and
/// fitting, and evaluation reuses it. In [`KdeMode::Split`] a seeded
/// token-level split reserves `1 − train_frac` of the pairs for evaluation.
/// Corpora with utterance structure should split at the utterance level
/// via [`crate::corpus::split_corpus`] and call [`fit_conditional_parts`].
pub fn fit_conditional(
    pairs: &[(String, ProsodyVector)],
    config: &ConditionalKdeConfig,
) -> Result<ConditionalKdeFit, KdeError> {
    match config.mode {
        KdeMode::All => Ok(ConditionalKdeFit {
            model: fit_conditional_parts(pairs, KdeMode::All, config)?,
            eval_pairs: pairs.to_vec(),
        }),
        KdeMode::Split => {
            if pairs.len() < 2 {
                return Err(KdeError::TooFewPoints {
                    needed: 2,
                    got: pairs.len(),
                });
            }
            if !(config.train_frac.is_finite()
                && 0.0 < config.train_frac
                && config.train_frac < 1.0)
            {
                return Err(KdeError::BadConfig(format!(
                    "train_frac must lie strictly between 0 and 1, got {}",
                    config.train_frac
                )));
            }
            let n = pairs.len();
            let n_fit = ((config.train_frac * n as f64).round() as usize).clamp(1, n - 1);
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
            order.shuffle(&mut rng);
            let mut fit_mask = vec![false; n];
            for &i in &order[..n_fit] {
                fit_mask[i] = true;
            }
            let fit_pairs: Vec<(String, ProsodyVector)> = (0..n)
                .filter(|&i| fit_mask[i])
                .map(|i| pairs[i].clone())
                .collect();
            let eval_pairs: Vec<(String, ProsodyVector)> = (0..n)
                .filter(|&i| !fit_mask[i])
                .map(|i| pairs[i].clone())
                .collect();
            Ok(ConditionalKdeFit {
                model: fit_conditional_parts(&fit_pairs, KdeMode::Split, config)?,
                eval_pairs,
            })
        }
    }
}

/// Conditional log-density p(p|w) in nats: the word's dedicated KDE when
/// present, otherwise the unconditional fallback.
pub fn conditional_log_density(model: &ConditionalKdeModel, p: &ProsodyVector, w: &str) -> f64 {
    match model.per_word.get(w) {
        Some(kde) => kde_log_density(kde, p),
        None => kde_log_density(&model.fallback, p),
    }
}
