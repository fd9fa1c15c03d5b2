//! From an f0 track to a four-number prosody vector and back.
//!
//! Builds a synthetic rise-fall contour, preprocesses it the way the
//! pipeline does (octave-outlier removal, log-mean normalization), cuts a
//! word span, resamples it to a fixed-length curve, and compresses that
//! curve to its first four DCT-II coefficients. The inverse transform
//! shows how much of the contour shape those four numbers keep.
//!
//! Run with: cargo run --example dct_pitch_vectors

use prosody_mi::pitch::{
    dct4, idct4, preprocess_track, word_curve, F0Track, PreprocessConfig, CURVE_POINTS,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A 1.2 s utterance sampled every 10 ms: a rise-fall "hat" contour
    // around 200 Hz, with one octave-jump tracking error planted at frame
    // 60 and a short unvoiced gap in the middle.
    let hop_s = 0.01;
    let n = 120;
    let mut f0: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            let hat = 1.0 - (2.0 * t - 1.0).abs(); // 0 → 1 → 0
            200.0 * (1.0 + 0.35 * hat)
        })
        .collect();
    f0[60] *= 2.0; // octave error, should be discarded as an outlier
    let voiced: Vec<bool> = (0..n).map(|i| !(55..=57).contains(&i)).collect();
    let track = F0Track::new(hop_s, f0, voiced)?;

    let config = PreprocessConfig::default();
    let clean = preprocess_track(&track, &config)?;
    // The cleaned track is fully voiced again: the octave error and the
    // unvoiced gap were dropped, then refilled by interpolation, and the
    // scale is mean-centered log-f0. The planted spike is gone:
    println!(
        "frame 60: raw {:.0} Hz spike -> cleaned {:+.4}, between neighbors {:+.4} and {:+.4}",
        track.f0()[60],
        clean.f0()[60],
        clean.f0()[59],
        clean.f0()[61]
    );

    // Cut the word span [0.2 s, 0.9 s] and resample to a fixed grid.
    let curve = word_curve(&clean, 0.2, 0.9)?;
    println!(
        "word curve: {} samples, first {:.4}, mid {:.4}, last {:.4}",
        CURVE_POINTS,
        curve.samples()[0],
        curve.samples()[CURVE_POINTS / 2],
        curve.samples()[CURVE_POINTS - 1]
    );

    // Four DCT-II coefficients carry level, tilt, and curvature.
    let vector = dct4(&curve);
    println!("prosody vector (orthonormal DCT-II, k = 0..3):");
    for (k, c) in vector.0.iter().enumerate() {
        println!("  c{k} = {c:+.5}");
    }

    // Reconstruct from the four coefficients and measure what survives.
    let recon = idct4(&vector, CURVE_POINTS)?;
    let mse: f64 = curve
        .samples()
        .iter()
        .zip(&recon)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / CURVE_POINTS as f64;
    let energy: f64 = curve.samples().iter().map(|v| v * v).sum::<f64>() / CURVE_POINTS as f64;
    println!(
        "reconstruction from 4 of {} coefficients: mse {:.2e} on mean-square signal {:.2e} \
         ({:.1}% of energy kept)",
        CURVE_POINTS,
        mse,
        energy,
        100.0 * (1.0 - mse / energy)
    );

    // A curve built back from its own coefficients maps to the same
    // coefficients again: the 4-dimensional code is a fixed point.
    let recon_curve = prosody_mi::pitch::PitchCurve::from_samples(&recon)?;
    let vector2 = dct4(&recon_curve);
    let drift = vector
        .0
        .iter()
        .zip(&vector2.0)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("round-trip coefficient drift: {drift:.2e}");
    Ok(())
}
