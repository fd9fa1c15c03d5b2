//! From density models to reported quantities: cross-entropies as mean
//! held-out surprisal, mutual information as the difference of a
//! conditional and an unconditional cross-entropy on the same tokens,
//! bootstrap and cross-validation uncertainty, and the ordered-alternative
//! trend test across typological groups.
//!
//! All entropies and MI values are in nats. MI estimates satisfy the exact
//! arithmetic identity `mi_nats = h_unconditional.nats − h_conditional.nats`
//! and may be negative; estimates are reported as-is.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ProsodicType;
use crate::math;

/// Errors from entropy/MI estimation, resampling, and the results format.
#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("test set is empty")]
    EmptyTest,
    #[error("item {index}: non-finite surprisal {value}")]
    NonFiniteSurprisal { index: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("need at least {needed} items, got {got}")]
    TooFewItems { needed: usize, got: usize },
    #[error("trend-test group {name:?} is empty")]
    EmptyGroup { name: String },
    #[error("trend test needs at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("group {name:?} contains a non-finite value")]
    NonFiniteGroupValue { name: String },
    #[error("fold {fold}: {message}")]
    Fold { fold: usize, message: String },
    #[error("results file {path}: {message}")]
    ResultsFile { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Resampling settings for uncertainty estimates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UncertaintyConfig {
    /// Bootstrap resamples used for standard errors (0 disables and
    /// reports a standard error of 0).
    pub bootstrap_resamples: usize,
    /// Seed for the bootstrap stream.
    pub seed: u64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self {
            bootstrap_resamples: 1000,
            seed: 0,
        }
    }
}

/// A cross-entropy estimate: mean surprisal over test items, in nats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    /// Mean surprisal in nats.
    pub nats: f64,
    /// Nonparametric-bootstrap standard error (or across-fold spread for
    /// cross-validated estimates).
    pub stderr: f64,
    /// Number of test items.
    pub n: usize,
    /// Estimator tag, e.g. `KDE-W(split)`.
    pub method: String,
}

/// A mutual-information estimate with its two entropy terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub h_unconditional: EntropyEstimate,
    pub h_conditional: EntropyEstimate,
    /// Exactly `h_unconditional.nats − h_conditional.nats`; may be negative.
    pub mi_nats: f64,
    /// Paired-bootstrap standard error over per-item pointwise MI (or the
    /// across-fold standard deviation for cross-validated estimates).
    pub stderr: f64,
    pub language: String,
    pub prosodic_type: ProsodicType,
    pub method: String,
}

/// Identity of an MI estimate: which corpus and estimator produced it.
#[derive(Clone, Debug)]
pub struct EstimateLabel {
    pub language: String,
    pub prosodic_type: ProsodicType,
    pub method: String,
}

/// Result of the ordered-alternative trend test.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrendResult {
    /// Sum over ordered group pairs of between-group rank counts
    /// (ties count one half).
    pub statistic: f64,
    /// Permutation p-value with the add-one convention; never 0.
    pub p_value: f64,
    pub n_permutations: usize,
    /// Group names in the tested (increasing) order.
    pub group_order: Vec<String>,
}

// ---------------------------------------------------------------------------
// Entropy and MI
// ---------------------------------------------------------------------------

/// Scores every item and checks the result is finite.
fn surprisals<T: Sync>(
    scorer: impl Fn(&T) -> f64 + Sync,
    test: &[T],
) -> Result<Vec<f64>, EstimatorError> {
    let scores: Vec<f64> = test.par_iter().map(|item| -scorer(item)).collect();
    for (index, &value) in scores.iter().enumerate() {
        if !value.is_finite() {
            return Err(EstimatorError::NonFiniteSurprisal { index, value });
        }
    }
    Ok(scores)
}

/// Standard error of the mean of `values` by seeded nonparametric
/// bootstrap: the sample standard deviation of resampled means.
fn bootstrap_stderr(values: &[f64], resamples: usize, seed: u64) -> f64 {
    if resamples == 0 || values.len() < 2 {
        return 0.0;
    }
    let n = values.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(resamples);
    let mut draw = Vec::with_capacity(n);
    for _ in 0..resamples {
        draw.clear();
        for _ in 0..n {
            draw.push(values[rng.gen_range(0..n)]);
        }
        means.push(math::mean(&draw));
    }
    math::sample_std(&means)
}

/// Estimates a cross-entropy as the mean surprisal (negative log-density)
/// of the test items under `scorer`, with a bootstrap standard error.
///
/// # Examples
///
/// ```
/// use prosody_mi::estimator::{estimate_entropy, UncertaintyConfig};
///
/// let items = vec![(), (), ()];
/// let e = estimate_entropy(|_| -1.5, &items, "constant", &UncertaintyConfig::default())
///     .unwrap();
/// assert_eq!(e.nats, 1.5);
/// assert_eq!(e.stderr, 0.0);
/// ```
pub fn estimate_entropy<T: Sync>(
    scorer: impl Fn(&T) -> f64 + Sync,
    test: &[T],
    method: &str,
    cfg: &UncertaintyConfig,
) -> Result<EntropyEstimate, EstimatorError> {
    if test.is_empty() {
        return Err(EstimatorError::EmptyTest);
    }
    let s = surprisals(&scorer, test)?;
    Ok(EntropyEstimate {
        nats: math::mean(&s),
        stderr: bootstrap_stderr(&s, cfg.bootstrap_resamples, cfg.seed),
        n: s.len(),
        method: method.to_string(),
    })
}

/// Per-item pointwise MI: conditional log-density minus unconditional
/// log-density. Items routed through an occurrence-threshold backoff score
/// identically under both models and contribute exactly 0.
pub fn pointwise_mi<T: Sync>(
    uncond: impl Fn(&T) -> f64 + Sync,
    cond: impl Fn(&T) -> f64 + Sync,
    test: &[T],
) -> Result<Vec<f64>, EstimatorError> {
    if test.is_empty() {
        return Err(EstimatorError::EmptyTest);
    }
    let u = surprisals(&uncond, test)?;
    let c = surprisals(&cond, test)?;
    Ok(u.iter().zip(&c).map(|(su, sc)| su - sc).collect())
}

/// Estimates MI as the difference between the unconditional and conditional
/// cross-entropies of the same test items.
///
/// `mi_nats` is the exact difference of the two entropy fields. The MI
/// standard error is a *paired* bootstrap over per-item pointwise MI values
/// (the two terms share test items, so their errors are correlated and must
/// be resampled together).
pub fn estimate_mi<T: Sync>(
    uncond: impl Fn(&T) -> f64 + Sync,
    cond: impl Fn(&T) -> f64 + Sync,
    test: &[T],
    label: &EstimateLabel,
    cfg: &UncertaintyConfig,
) -> Result<MiEstimate, EstimatorError> {
    if test.is_empty() {
        return Err(EstimatorError::EmptyTest);
    }
    let u = surprisals(&uncond, test)?;
    let c = surprisals(&cond, test)?;
    let pmi: Vec<f64> = u.iter().zip(&c).map(|(su, sc)| su - sc).collect();

    let h_unconditional = EntropyEstimate {
        nats: math::mean(&u),
        stderr: bootstrap_stderr(&u, cfg.bootstrap_resamples, cfg.seed.wrapping_add(1)),
        n: u.len(),
        method: label.method.clone(),
    };
    let h_conditional = EntropyEstimate {
        nats: math::mean(&c),
        stderr: bootstrap_stderr(&c, cfg.bootstrap_resamples, cfg.seed.wrapping_add(2)),
        n: c.len(),
        method: label.method.clone(),
    };
    let mi_nats = h_unconditional.nats - h_conditional.nats;
    debug_assert!(
        (mi_nats - math::mean(&pmi)).abs() <= 1e-9 * (1.0 + mi_nats.abs()),
        "MI difference-of-means and mean-of-differences diverged"
    );
    Ok(MiEstimate {
        h_unconditional,
        h_conditional,
        mi_nats,
        stderr: bootstrap_stderr(&pmi, cfg.bootstrap_resamples, cfg.seed),
        language: label.language.clone(),
        prosodic_type: label.prosodic_type,
        method: label.method.clone(),
    })
}

// ---------------------------------------------------------------------------
// Cross-validated MI
// ---------------------------------------------------------------------------

/// Fold id per item: a seeded shuffle dealt round-robin into `folds` folds.
pub fn fold_assignments(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>, EstimatorError> {
    if folds < 2 {
        return Err(EstimatorError::BadConfig(format!(
            "cross-validation needs at least 2 folds, got {folds}"
        )));
    }
    if n < folds {
        return Err(EstimatorError::TooFewItems {
            needed: folds,
            got: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assignment = vec![0usize; n];
    for (rank, &item) in order.iter().enumerate() {
        assignment[item] = rank % folds;
    }
    Ok(assignment)
}

/// Fold id per item such that items sharing a group id land in the same
/// fold (e.g. all tokens of one utterance). Groups are shuffled and dealt
/// round-robin.
pub fn grouped_fold_assignments(
    groups: &[usize],
    folds: usize,
    seed: u64,
) -> Result<Vec<usize>, EstimatorError> {
    let mut unique: Vec<usize> = groups.to_vec();
    unique.sort_unstable();
    unique.dedup();
    let group_fold = fold_assignments(unique.len(), folds, seed)?;
    Ok(groups
        .iter()
        .map(|g| {
            let pos = unique.binary_search(g).expect("id came from this list");
            group_fold[pos]
        })
        .collect())
}

/// One fold's entropy pair, produced by the caller's fit-and-score closure.
#[derive(Clone, Copy, Debug)]
pub struct FoldScore {
    pub h_unconditional: f64,
    pub h_conditional: f64,
}

/// Cross-validated MI: fits on each fold's complement, scores on the fold,
/// and reports the across-fold mean with the across-fold standard
/// deviation as the uncertainty.
///
/// `groups`, when given, keeps items with equal group ids in the same fold.
/// The closure receives `(train_items, test_items)` and returns the two
/// held-out cross-entropies.
pub fn cv_mi<T: Clone + Sync>(
    data: &[T],
    groups: Option<&[usize]>,
    folds: usize,
    seed: u64,
    label: &EstimateLabel,
    fit_and_score: impl Fn(&[T], &[T]) -> Result<FoldScore, String>,
) -> Result<MiEstimate, EstimatorError> {
    if let Some(g) = groups {
        if g.len() != data.len() {
            return Err(EstimatorError::BadConfig(format!(
                "groups length {} does not match data length {}",
                g.len(),
                data.len()
            )));
        }
    }
    let assignment = match groups {
        Some(g) => grouped_fold_assignments(g, folds, seed)?,
        None => fold_assignments(data.len(), folds, seed)?,
    };

    let mut h_u = Vec::with_capacity(folds);
    let mut h_c = Vec::with_capacity(folds);
    let mut mi = Vec::with_capacity(folds);
    for fold in 0..folds {
        let train: Vec<T> = data
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a != fold)
            .map(|(item, _)| item.clone())
            .collect();
        let test: Vec<T> = data
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a == fold)
            .map(|(item, _)| item.clone())
            .collect();
        if train.is_empty() || test.is_empty() {
            return Err(EstimatorError::Fold {
                fold,
                message: "fold has an empty train or test side".to_string(),
            });
        }
        let score = fit_and_score(&train, &test)
            .map_err(|message| EstimatorError::Fold { fold, message })?;
        h_u.push(score.h_unconditional);
        h_c.push(score.h_conditional);
        mi.push(score.h_unconditional - score.h_conditional);
    }

    let h_unconditional = EntropyEstimate {
        nats: math::mean(&h_u),
        stderr: math::sample_std(&h_u),
        n: data.len(),
        method: label.method.clone(),
    };
    let h_conditional = EntropyEstimate {
        nats: math::mean(&h_c),
        stderr: math::sample_std(&h_c),
        n: data.len(),
        method: label.method.clone(),
    };
    Ok(MiEstimate {
        mi_nats: h_unconditional.nats - h_conditional.nats,
        stderr: math::sample_std(&mi),
        h_unconditional,
        h_conditional,
        language: label.language.clone(),
        prosodic_type: label.prosodic_type,
        method: label.method.clone(),
    })
}

// ---------------------------------------------------------------------------
// Ordered-alternative trend test
// ---------------------------------------------------------------------------

/// Between-group statistic: for every ordered pair of groups (i < j), count
/// pairs where the later group's value is larger, ties counting one half.
fn trend_statistic(groups: &[Vec<f64>]) -> f64 {
    let sorted: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let mut s = g.clone();
            s.sort_by(|a, b| a.partial_cmp(b).expect("values are finite"));
            s
        })
        .collect();
    let mut total = 0.0;
    for i in 0..groups.len() {
        for later in &groups[i + 1..] {
            let earlier = &sorted[i];
            for &y in later {
                let below = earlier.partition_point(|&x| x < y);
                let through = earlier.partition_point(|&x| x <= y);
                total += below as f64 + 0.5 * (through - below) as f64;
            }
        }
    }
    total
}

/// Ordered-alternative permutation trend test over groups given in
/// hypothesized increasing order (for prosodic typology:
/// stress-accent < pitch-accent < tonal).
///
/// The statistic sums, over ordered group pairs, the count of cross-group
/// value pairs in increasing order (ties count one half). The p-value
/// compares it against `n_permutations` seeded relabelings of the pooled
/// values, with the add-one convention so p is never 0.
pub fn jonckheere_test(
    groups: &[(String, Vec<f64>)],
    n_permutations: usize,
    seed: u64,
) -> Result<TrendResult, EstimatorError> {
    if groups.len() < 2 {
        return Err(EstimatorError::TooFewGroups(groups.len()));
    }
    for (name, values) in groups {
        if values.is_empty() {
            return Err(EstimatorError::EmptyGroup { name: name.clone() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::NonFiniteGroupValue { name: name.clone() });
        }
    }
    if n_permutations == 0 {
        return Err(EstimatorError::BadConfig(
            "need at least 1 permutation".to_string(),
        ));
    }

    let bare: Vec<Vec<f64>> = groups.iter().map(|(_, v)| v.clone()).collect();
    let observed = trend_statistic(&bare);
    let sizes: Vec<usize> = bare.iter().map(Vec::len).collect();
    let pooled: Vec<f64> = bare.concat();

    // Each permutation uses its own counter-mode stream of the master seed,
    // so the result is deterministic under any parallel schedule.
    let exceed: usize = (0..n_permutations)
        .into_par_iter()
        .map(|perm| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(perm as u64 + 1);
            let mut shuffled = pooled.clone();
            shuffled.shuffle(&mut rng);
            let mut regrouped = Vec::with_capacity(sizes.len());
            let mut offset = 0;
            for &size in &sizes {
                regrouped.push(shuffled[offset..offset + size].to_vec());
                offset += size;
            }
            // Statistics are exact multiples of 0.5, so >= is reliable.
            usize::from(trend_statistic(&regrouped) >= observed)
        })
        .sum();

    Ok(TrendResult {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (n_permutations + 1) as f64,
        n_permutations,
        group_order: groups.iter().map(|(name, _)| name.clone()).collect(),
    })
}

// ---------------------------------------------------------------------------
// Results file
// ---------------------------------------------------------------------------

/// One row of the results CSV. Field order is the column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub language: String,
    pub prosodic_type: ProsodicType,
    pub method: String,
    pub h_nats: f64,
    pub h_cond_nats: f64,
    pub mi_nats: f64,
    pub stderr: f64,
    pub n_tokens: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl ResultRow {
    /// Flattens an MI estimate into a results row.
    pub fn from_estimate(estimate: &MiEstimate, seed: u64, config_hash: &str) -> Self {
        Self {
            language: estimate.language.clone(),
            prosodic_type: estimate.prosodic_type,
            method: estimate.method.clone(),
            h_nats: estimate.h_unconditional.nats,
            h_cond_nats: estimate.h_conditional.nats,
            mi_nats: estimate.mi_nats,
            stderr: estimate.stderr,
            n_tokens: estimate.h_unconditional.n,
            seed,
            config_hash: config_hash.to_string(),
        }
    }
}

/// Writes result rows as CSV. Identical rows always produce identical
/// bytes, so reruns with the same configuration and seed can be compared
/// with a file hash.
pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<(), EstimatorError> {
    let file_err = |message: String| EstimatorError::ResultsFile {
        path: path.display().to_string(),
        message,
    };
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).map_err(|e| file_err(e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| file_err(e.to_string()))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Reads a results CSV written by [`write_results_csv`].
pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>, EstimatorError> {
    let file_err = |message: String| EstimatorError::ResultsFile {
        path: path.display().to_string(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| file_err(e.to_string()))?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record.map_err(|e| file_err(e.to_string()))?);
    }
    if rows.is_empty() {
        return Err(file_err("no result rows".to_string()));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_distr::StandardNormal;

    fn label(method: &str) -> EstimateLabel {
        EstimateLabel {
            language: "test".to_string(),
            prosodic_type: ProsodicType::Tonal,
            method: method.to_string(),
        }
    }

    #[test]
    fn constant_scorer_gives_exact_entropy_and_zero_stderr() {
        let items = vec![0usize; 17];
        let e = estimate_entropy(|_| -2.25, &items, "m", &UncertaintyConfig::default()).unwrap();
        assert_eq!(e.nats, 2.25);
        assert_eq!(e.stderr, 0.0);
        assert_eq!(e.n, 17);
    }

    #[test]
    fn entropy_mean_is_permutation_invariant() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let items: Vec<f64> = (0..500).map(|_| rng.gen_range(-4.0..-1.0)).collect();
        let mut reversed = items.clone();
        reversed.reverse();
        let cfg = UncertaintyConfig {
            bootstrap_resamples: 0,
            seed: 0,
        };
        let a = estimate_entropy(|x: &f64| *x, &items, "m", &cfg).unwrap();
        let b = estimate_entropy(|x: &f64| *x, &reversed, "m", &cfg).unwrap();
        assert_abs_diff_eq!(a.nats, b.nats, epsilon = 1e-12);
    }

    #[test]
    fn doubled_test_set_keeps_the_mean() {
        let items = vec![-1.0f64, -2.0, -4.0];
        let mut doubled = items.clone();
        doubled.extend_from_slice(&items);
        let cfg = UncertaintyConfig {
            bootstrap_resamples: 0,
            seed: 0,
        };
        let a = estimate_entropy(|x: &f64| *x, &items, "m", &cfg).unwrap();
        let b = estimate_entropy(|x: &f64| *x, &doubled, "m", &cfg).unwrap();
        assert_abs_diff_eq!(a.nats, b.nats, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_surprisal_is_reported_with_its_index() {
        let items = vec![-1.0f64, f64::NEG_INFINITY, -2.0];
        let err = estimate_entropy(|x: &f64| *x, &items, "m", &UncertaintyConfig::default())
            .unwrap_err();
        assert!(matches!(
            err,
            EstimatorError::NonFiniteSurprisal { index: 1, .. }
        ));
    }

    #[test]
    fn bootstrap_stderr_tracks_the_analytic_standard_error() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..2000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let analytic = math::sample_std(&values) / (values.len() as f64).sqrt();
        let boot = bootstrap_stderr(&values, 1000, 1);
        assert!(
            (boot / analytic - 1.0).abs() < 0.15,
            "bootstrap {boot} vs analytic {analytic}"
        );
    }

    #[test]
    fn identical_scorers_give_exactly_zero_mi() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let items: Vec<f64> = (0..300).map(|_| rng.gen_range(-5.0..-0.5)).collect();
        let mi = estimate_mi(
            |x: &f64| *x,
            |x: &f64| *x,
            &items,
            &label("same"),
            &UncertaintyConfig::default(),
        )
        .unwrap();
        assert_eq!(mi.mi_nats, 0.0);
        assert_eq!(mi.stderr, 0.0);
        assert_eq!(
            mi.mi_nats,
            mi.h_unconditional.nats - mi.h_conditional.nats
        );
    }

    #[test]
    fn mi_matches_mean_pointwise_mi() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let items: Vec<(f64, f64)> = (0..400)
            .map(|_| (rng.gen_range(-6.0..-2.0), rng.gen_range(-5.0..-1.0)))
            .collect();
        let uncond = |it: &(f64, f64)| it.0;
        let cond = |it: &(f64, f64)| it.1;
        let mi = estimate_mi(
            uncond,
            cond,
            &items,
            &label("m"),
            &UncertaintyConfig::default(),
        )
        .unwrap();
        let pmi = pointwise_mi(uncond, cond, &items).unwrap();
        assert_abs_diff_eq!(mi.mi_nats, math::mean(&pmi), epsilon = 1e-12);
    }

    #[test]
    fn fold_assignments_partition_evenly_and_deterministically() {
        let a1 = fold_assignments(103, 5, 9).unwrap();
        let a2 = fold_assignments(103, 5, 9).unwrap();
        assert_eq!(a1, a2);
        let mut counts = [0usize; 5];
        for &f in &a1 {
            counts[f] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 103);
        assert!(counts.iter().all(|&c| c == 20 || c == 21));
        assert!(matches!(
            fold_assignments(3, 5, 9),
            Err(EstimatorError::TooFewItems { .. })
        ));
    }

    #[test]
    fn grouped_folds_never_split_a_group() {
        let groups: Vec<usize> = (0..60).map(|i| i / 3).collect();
        let assignment = grouped_fold_assignments(&groups, 4, 2).unwrap();
        for i in 0..groups.len() {
            for j in 0..groups.len() {
                if groups[i] == groups[j] {
                    assert_eq!(assignment[i], assignment[j]);
                }
            }
        }
    }

    #[test]
    fn cv_mi_with_constant_folds_has_zero_spread() {
        let data: Vec<usize> = (0..50).collect();
        let mi = cv_mi(&data, None, 5, 1, &label("cv"), |_, _| {
            Ok(FoldScore {
                h_unconditional: 3.0,
                h_conditional: 2.2,
            })
        })
        .unwrap();
        assert_abs_diff_eq!(mi.mi_nats, 0.8, epsilon = 1e-12);
        assert_eq!(mi.stderr, 0.0);
        assert_eq!(mi.h_unconditional.n, 50);
    }

    #[test]
    fn cv_mi_reports_fold_errors() {
        let data: Vec<usize> = (0..50).collect();
        let err = cv_mi(&data, None, 5, 1, &label("cv"), |_, _| {
            Err("training diverged".to_string())
        })
        .unwrap_err();
        assert!(matches!(err, EstimatorError::Fold { fold: 0, .. }));
    }

    #[test]
    fn trend_statistic_counts_perfectly_ordered_groups() {
        let groups = vec![
            ("a".to_string(), vec![1.0, 2.0, 3.0]),
            ("b".to_string(), vec![4.0, 5.0, 6.0]),
            ("c".to_string(), vec![7.0, 8.0, 9.0]),
        ];
        let result = jonckheere_test(&groups, 4000, 1).unwrap();
        assert_eq!(result.statistic, 27.0);
        assert!(
            result.p_value < 0.01,
            "perfect ordering should be significant, got p = {}",
            result.p_value
        );
        assert!(result.p_value >= 1.0 / 4001.0);
        assert_eq!(result.group_order, ["a", "b", "c"]);
    }

    #[test]
    fn trend_statistic_matches_double_loop_oracle() {
        // Dual route: the midrank/binary-search statistic must agree with a
        // direct O(n²) pair count on many random configurations with ties.
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n_groups = rng.gen_range(2..=4);
            let groups: Vec<Vec<f64>> = (0..n_groups)
                .map(|_| {
                    let size = rng.gen_range(1..=5);
                    (0..size).map(|_| rng.gen_range(0..4) as f64).collect()
                })
                .collect();
            let mut oracle = 0.0;
            for i in 0..groups.len() {
                for j in i + 1..groups.len() {
                    for &x in &groups[i] {
                        for &y in &groups[j] {
                            if x < y {
                                oracle += 1.0;
                            } else if x == y {
                                oracle += 0.5;
                            }
                        }
                    }
                }
            }
            assert_eq!(trend_statistic(&groups), oracle);
        }
    }

    #[test]
    fn all_tied_groups_are_insignificant() {
        let groups = vec![
            ("a".to_string(), vec![1.0, 1.0, 1.0]),
            ("b".to_string(), vec![1.0, 1.0]),
            ("c".to_string(), vec![1.0, 1.0, 1.0]),
        ];
        let result = jonckheere_test(&groups, 500, 3).unwrap();
        assert!(result.p_value > 0.5, "p = {}", result.p_value);
    }

    #[test]
    fn reversed_order_on_increasing_data_is_near_one() {
        let groups = vec![
            ("c".to_string(), vec![7.0, 8.0, 9.0]),
            ("b".to_string(), vec![4.0, 5.0, 6.0]),
            ("a".to_string(), vec![1.0, 2.0, 3.0]),
        ];
        let result = jonckheere_test(&groups, 2000, 4).unwrap();
        assert!(result.p_value > 0.9, "p = {}", result.p_value);
    }

    #[test]
    fn jonckheere_is_deterministic_and_validates_input() {
        let groups = vec![
            ("a".to_string(), vec![0.1, 0.3]),
            ("b".to_string(), vec![0.2, 0.6]),
        ];
        let r1 = jonckheere_test(&groups, 1000, 7).unwrap();
        let r2 = jonckheere_test(&groups, 1000, 7).unwrap();
        assert_eq!(r1.p_value, r2.p_value);
        assert_eq!(r1.statistic, r2.statistic);

        assert!(matches!(
            jonckheere_test(&groups[..1], 1000, 7),
            Err(EstimatorError::TooFewGroups(1))
        ));
        let with_empty = vec![
            ("a".to_string(), vec![0.1]),
            ("b".to_string(), Vec::new()),
        ];
        assert!(matches!(
            jonckheere_test(&with_empty, 1000, 7),
            Err(EstimatorError::EmptyGroup { .. })
        ));
    }

    #[test]
    fn results_csv_round_trips_and_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let rows = vec![
            ResultRow {
                language: "ZH".to_string(),
                prosodic_type: ProsodicType::Tonal,
                method: "KDE-W(split)".to_string(),
                h_nats: 5.676754,
                h_cond_nats: 4.290421,
                mi_nats: 1.386333,
                stderr: 0.0123,
                n_tokens: 36729,
                seed: 42,
                config_hash: "deadbeefdeadbeef".to_string(),
            },
            ResultRow {
                language: "EN".to_string(),
                prosodic_type: ProsodicType::StressAccent,
                method: "MDN-W".to_string(),
                h_nats: 9.5,
                h_cond_nats: 9.4,
                mi_nats: 0.1,
                stderr: 0.02,
                n_tokens: 1000,
                seed: 42,
                config_hash: "deadbeefdeadbeef".to_string(),
            },
        ];
        write_results_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "language,prosodic_type,method,h_nats,h_cond_nats,mi_nats,stderr,n_tokens,seed,config_hash\n"
        ));
        let reloaded = read_results_csv(&path).unwrap();
        assert_eq!(rows, reloaded);

        let path2 = dir.path().join("results2.csv");
        write_results_csv(&path2, &rows).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }
}
