//! Recover a dialed-in mutual information across a lexicality continuum.
//!
//! The synthetic corpus ties each word to a tone; a leak probability lets
//! tokens ignore their word's tone, interpolating between fully lexical
//! tone (MI = ln n_tones) and no association (MI = 0). For a range of
//! targets the leak is tuned by bisection against the Monte Carlo oracle,
//! a corpus is generated, and the held-out KDE estimator is asked to
//! recover the truth it was never told.
//!
//! Run with: cargo run --release --example synthetic_continuum

use prosody_mi::pipeline::{estimate_corpus, EstimateInput, EstimateOptions, Method};
use prosody_mi::synth::{generate, leak_for_target_mi, standard_tone_means, true_mi, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = SynthSpec {
        n_tones: 4,
        tone_means: standard_tone_means(4, 7.0),
        tone_stddevs: vec![[1.0; 4]; 4],
        lexicon_size: 4,
        tokens_per_sentence: 8,
        n_sentences: 600,
        ..SynthSpec::default()
    };
    let targets = [0.0, 0.3, 0.7, (4.0f64).ln()];

    println!(
        "{:>7} {:>7} {:>9} {:>11} {:>8}",
        "target", "leak", "true MI", "estimate", "error"
    );
    for (i, &target) in targets.iter().enumerate() {
        let mut spec = base.clone();
        spec.seed = 100 + i as u64;
        // leak = 1 severs the word-tone link exactly; other targets are
        // found by bisection on the Monte Carlo ground truth.
        spec.leak = if target == 0.0 {
            1.0
        } else {
            leak_for_target_mi(&spec, target, 60_000, 1e-3)?
        };
        let oracle = true_mi(&spec, 120_000)?;
        let data = generate(&spec)?;

        let options = EstimateOptions {
            method: Method::KdeSplit,
            lambda: 20,
            seed: 7,
            ..EstimateOptions::default()
        };
        let input = EstimateInput {
            corpus: &data.corpus,
            cache: &data.cache,
            static_vectors: None,
            context_store: None,
        };
        let outcome = estimate_corpus(&input, &options)?;
        println!(
            "{:>7.3} {:>7.3} {:>9.4} {:>7.4} ± {:.4} {:>+8.4}",
            target,
            spec.leak,
            oracle.nats,
            outcome.estimate.mi_nats,
            outcome.estimate.stderr,
            outcome.estimate.mi_nats - oracle.nats
        );
    }

    println!("\nestimates track the dialed-in truth and preserve its ordering;");
    println!("tightening them further is a matter of tokens, not tuning.");
    Ok(())
}
