//! Held-out cross-entropy of a KDE against a known differential entropy.
//!
//! Draws four-dimensional standard-normal vectors, selects a kernel
//! bandwidth by cross-validation over the two closed-form rules plus a
//! fixed grid, fits the density on one part, and scores the other. For
//! N(0, I4) the true differential entropy is 2·ln(2πe) ≈ 5.6758 nats; the
//! gap between the cross-entropy and that value is the estimator's excess,
//! which shrinks as the fitting sample grows.
//!
//! Run with: cargo run --release --example kde_entropy

use prosody_mi::estimator::{estimate_entropy, UncertaintyConfig};
use prosody_mi::kde::{
    default_bandwidth_candidates, fit_kde, kde_log_density, select_bandwidth_cv,
};
use prosody_mi::pitch::{ProsodyVector, VECTOR_DIM};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

fn draw(n: usize, rng: &mut ChaCha20Rng) -> Vec<ProsodyVector> {
    (0..n)
        .map(|_| {
            let mut v = [0.0; VECTOR_DIM];
            for value in &mut v {
                *value = StandardNormal.sample(rng);
            }
            ProsodyVector(v)
        })
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = 2.0 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    println!("true differential entropy of N(0, I4): {truth:.4} nats\n");
    println!("{:>8} {:>10} {:>12} {:>9}", "n_fit", "bandwidth", "cross-ent", "excess");

    let mut rng = ChaCha20Rng::seed_from_u64(42);
    let held_out = draw(2_000, &mut rng);

    for n_fit in [500usize, 2_000, 8_000] {
        let fit_sample = draw(n_fit, &mut rng);

        // Candidates: Scott and Silverman rules evaluated on this sample,
        // plus fixed values; 10-fold CV picks the best predictive one.
        let candidates = default_bandwidth_candidates(&fit_sample)?;
        let bandwidth = select_bandwidth_cv(&fit_sample, &candidates, 10, 7)?;
        let model = fit_kde(&fit_sample, bandwidth)?;

        let estimate = estimate_entropy(
            |p| kde_log_density(&model, p),
            &held_out,
            "KDE",
            &UncertaintyConfig::default(),
        )?;
        println!(
            "{:>8} {:>10.4} {:>12.4} {:>+9.4}",
            n_fit,
            bandwidth,
            estimate.nats,
            estimate.nats - truth
        );
    }

    println!("\nthe cross-entropy exceeds the true entropy in expectation and tightens");
    println!("with data (the last row's small deficit is held-out sampling noise);");
    println!("that one-sided bias is why MI uses the same held-out tokens for both terms.");
    Ok(())
}
