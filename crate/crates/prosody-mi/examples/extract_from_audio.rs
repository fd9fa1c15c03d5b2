//! Audio and f0 references in, word-level prosody vectors out.
//!
//! Builds a two-utterance corpus in a temporary directory: one utterance
//! references a WAV file (a sine whose frequency glides word by word), the
//! other a precomputed f0 track. Extraction runs the pitch tracker where
//! needed, preprocesses, and caches one four-coefficient vector per word;
//! the report says what was skipped and why.
//!
//! Run with: cargo run --example extract_from_audio

use prosody_mi::audio::write_wav_mono;
use prosody_mi::corpus::{
    load_manifest, save_manifest, Corpus, ProsodicType, TokenizationScheme, Utterance, WordToken,
};
use prosody_mi::pipeline::{extract_corpus, ExtractOptions};
use prosody_mi::pitch::{save_f0_track, F0Track};

/// A sine whose instantaneous frequency follows `f0_at`, via phase
/// accumulation so glides stay artifact-free.
fn gliding_sine(duration_s: f64, sample_rate: f64, f0_at: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = (duration_s * sample_rate).round() as usize;
    let mut phase = 0.0f64;
    (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate;
            phase += 2.0 * std::f64::consts::PI * f0_at(t) / sample_rate;
            0.6 * phase.sin()
        })
        .collect()
}

fn word(form: &str, start_s: f64, end_s: f64, index: usize) -> WordToken {
    WordToken {
        form: form.to_string(),
        start_s,
        end_s,
        index,
        n_subword_tokens: None,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let root = dir.path();

    // Utterance 1: audio on disk. Two words, a level tone then a rise.
    let sample_rate = 16_000.0;
    let samples = gliding_sine(1.2, sample_rate, |t| {
        if t < 0.6 {
            190.0
        } else {
            180.0 + 120.0 * (t - 0.6) / 0.6
        }
    });
    write_wav_mono(&root.join("utt1.wav"), &samples, sample_rate as u32)?;

    // Utterance 2: a precomputed f0 track (e.g. from an external tracker).
    let hop_s = 0.01;
    let f0: Vec<f64> = (0..100)
        .map(|i| 260.0 - 80.0 * i as f64 / 99.0) // one long fall
        .collect();
    let track = F0Track::new(hop_s, f0, vec![true; 100])?;
    save_f0_track(&track, &root.join("utt2.f0"))?;

    let corpus = Corpus {
        language: "demo".to_string(),
        prosodic_type: ProsodicType::Tonal,
        tokenization_scheme: TokenizationScheme::Word,
        utterances: vec![
            Utterance {
                utterance_id: "utt1".to_string(),
                language: "demo".to_string(),
                speaker_id: "spk1".to_string(),
                text: "level rise".to_string(),
                words: vec![word("level", 0.05, 0.55, 0), word("rise", 0.65, 1.15, 1)],
                audio_ref: Some("utt1.wav".to_string()),
                f0_ref: None,
            },
            Utterance {
                utterance_id: "utt2".to_string(),
                language: "demo".to_string(),
                speaker_id: "spk2".to_string(),
                text: "fall".to_string(),
                words: vec![word("fall", 0.05, 0.95, 0)],
                audio_ref: None,
                f0_ref: Some("utt2.f0".to_string()),
            },
        ],
    };

    // Manifests round-trip through JSON lines; extraction resolves the
    // audio/f0 references against the manifest's directory.
    let manifest = root.join("corpus.jsonl");
    save_manifest(&corpus, &manifest)?;
    let corpus = load_manifest(&manifest)?;

    let (cache, report) = extract_corpus(&corpus, root, &ExtractOptions::default())?;
    println!(
        "extracted {} word vectors ({} skipped)",
        report.cached,
        report.skipped.len()
    );
    for skip in &report.skipped {
        println!(
            "  skipped {}[{}]: {}",
            skip.utterance_id, skip.word_index, skip.reason
        );
    }

    for (utt, token) in corpus.tokens() {
        if let Some(vector) = cache.get(&utt.utterance_id, token.index) {
            println!(
                "  {:>5}[{}] {:<6} -> [{:+.3}, {:+.3}, {:+.3}, {:+.3}]",
                utt.utterance_id,
                token.index,
                token.form,
                vector.0[0],
                vector.0[1],
                vector.0[2],
                vector.0[3]
            );
        }
    }

    // The mean-centered log scale makes c0 ≈ 0 for a level word; the tilt
    // coefficient c1 separates rises (negative slope coefficient sign
    // convention: a rise gives c1 < 0) from falls (c1 > 0).
    let rise = cache.get("utt1", 1).expect("rise cached");
    let fall = cache.get("utt2", 0).expect("fall cached");
    println!(
        "tilt coefficients: rise c1 = {:+.3}, fall c1 = {:+.3}",
        rise.0[1], fall.0[1]
    );
    Ok(())
}
