//! Small numeric helpers shared across the crate: overflow-safe
//! log-sum-exp, compensated summation, and basic sample statistics.

/// Overflow-safe `ln(sum(exp(x_i)))`.
///
/// Returns negative infinity for an empty slice (the log of an empty sum)
/// and stays finite whenever at least one term is finite.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // Empty input, all terms -inf, or a +inf/NaN term: the max already
        // tells the whole story.
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Neumaier-compensated sum. Keeps error near one ulp even for long,
/// mixed-magnitude inputs, which matters for the exact arithmetic
/// identities the estimators promise.
pub(crate) fn sum(xs: &[f64]) -> f64 {
    let mut acc = 0.0f64;
    let mut compensation = 0.0f64;
    for &x in xs {
        let t = acc + x;
        if acc.abs() >= x.abs() {
            compensation += (acc - t) + x;
        } else {
            compensation += (x - t) + acc;
        }
        acc = t;
    }
    acc + compensation
}

/// Compensated arithmetic mean. NaN for an empty slice.
pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        sum(xs) / xs.len() as f64
    }
}

/// Sample standard deviation with Bessel's correction (ddof = 1).
/// Returns 0.0 when fewer than two values are given.
pub(crate) fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|&x| (x - m) * (x - m)).collect();
    (sum(&sq) / (xs.len() - 1) as f64).sqrt()
}

/// Median of a slice (average of the two central values for even lengths).
/// NaN for an empty slice.
pub(crate) fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("median input must not contain NaN"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}
