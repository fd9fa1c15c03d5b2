//! Word-level pitch processing: f0 extraction, track cleaning, fixed-length
//! word curves, and the compact cosine-transform parameterization used by
//! every density estimator in this crate.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`extract_f0`] — fundamental-frequency tracking over a mono waveform
//!    using a cumulative-mean-normalized difference function (25 ms frames,
//!    10 ms hop, and a 60–400 Hz search range by default).
//! 2. [`preprocess_track`] — octave-outlier removal against the utterance
//!    median, linear interpolation across unvoiced gaps (edges held
//!    constant), and optional conversion to mean-centered natural-log f0.
//! 3. [`word_curve`] — linear resampling of a word's time span onto exactly
//!    [`CURVE_POINTS`] points, endpoints pinned to the span boundaries.
//! 4. [`dct4`] — orthonormal type-II discrete cosine transform, keeping the
//!    first [`VECTOR_DIM`] coefficients as the word's [`ProsodyVector`].
//!
//! Two plain-text formats are owned by this module: per-utterance f0 track
//! files (`time_s <TAB> f0_hz <TAB> voiced`, constant hop) handled by
//! [`load_f0_track`] / [`save_f0_track`], and the prosody-vector cache
//! (`utterance_id <TAB> word_index <TAB> c0..c3`) handled by
//! [`ProsodyCache`]. Both round-trip floating-point values exactly.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;

/// Number of samples in a resampled word-level pitch curve.
pub const CURVE_POINTS: usize = 100;

/// Number of cosine-transform coefficients kept per word.
pub const VECTOR_DIM: usize = 4;

/// Errors produced by pitch extraction, curve resampling, and the
/// file formats owned by this module.
#[derive(Debug, Error)]
pub enum PitchError {
    #[error("input signal is empty")]
    EmptySignal,
    #[error("sample rate {0} Hz is not usable (need at least 1000 Hz)")]
    InvalidSampleRate(f64),
    #[error("invalid pitch configuration: {0}")]
    InvalidConfig(String),
    #[error(
        "frame of {frame_s} s is too short for an f0 floor of {f0_min} Hz: \
         the correlation buffer must span two periods of the lowest frequency"
    )]
    FrameTooShort { frame_s: f64, f0_min: f64 },
    #[error("track has no voiced frames")]
    NoVoicedFrames,
    #[error("all voiced frames were removed as octave outliers")]
    AllFramesOutliers,
    #[error(
        "word span [{start_s}, {end_s}] s falls outside the track (duration {duration_s} s)"
    )]
    SpanOutOfRange {
        start_s: f64,
        end_s: f64,
        duration_s: f64,
    },
    #[error("word span [{start_s}, {end_s}] s covers fewer than two track frames")]
    DegenerateSpan { start_s: f64, end_s: f64 },
    #[error("reconstruction length {0} is shorter than the vector dimension")]
    ReconstructionTooShort(usize),
    #[error("curve must have exactly {expected} finite samples, got {got}")]
    BadCurve { expected: usize, got: usize },
    #[error("{path}:{line}: {message}")]
    TrackParse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: {message}")]
    CacheParse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("id {0:?} contains a tab or newline and cannot be written to a cache file")]
    UnwritableId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Core types
// ---------------------------------------------------------------------------

/// A fundamental-frequency track sampled at a constant hop.
///
/// Voiced frames carry a positive f0 in Hz when produced by [`extract_f0`]
/// or read from a track file. After [`preprocess_track`] with
/// [`Normalization::LogMean`] the values are mean-centered natural-log f0
/// and may be negative; the track is fully voiced at that point.
#[derive(Clone, Debug, PartialEq)]
pub struct F0Track {
    hop_s: f64,
    f0: Vec<f64>,
    voiced: Vec<bool>,
}

impl F0Track {
    /// Builds a track in the Hz domain, enforcing that voiced frames have a
    /// positive, finite f0 and unvoiced frames are non-negative.
    pub fn new(hop_s: f64, f0: Vec<f64>, voiced: Vec<bool>) -> Result<Self, PitchError> {
        if !(hop_s.is_finite() && hop_s > 0.0) {
            return Err(PitchError::InvalidConfig(format!(
                "hop must be positive, got {hop_s}"
            )));
        }
        if f0.len() != voiced.len() {
            return Err(PitchError::InvalidConfig(format!(
                "f0/voiced length mismatch: {} vs {}",
                f0.len(),
                voiced.len()
            )));
        }
        if f0.is_empty() {
            return Err(PitchError::EmptySignal);
        }
        for (i, (&f, &v)) in f0.iter().zip(&voiced).enumerate() {
            if !f.is_finite() || f < 0.0 || (v && f <= 0.0) {
                return Err(PitchError::InvalidConfig(format!(
                    "frame {i}: voiced={v} with f0={f} violates the track contract"
                )));
            }
        }
        Ok(Self { hop_s, f0, voiced })
    }

    /// Internal constructor for tracks whose values are no longer in Hz
    /// (e.g. mean-centered log-f0 after preprocessing).
    fn from_processed(hop_s: f64, f0: Vec<f64>, voiced: Vec<bool>) -> Self {
        Self { hop_s, f0, voiced }
    }

    /// Hop between consecutive frames, in seconds.
    pub fn hop_s(&self) -> f64 {
        self.hop_s
    }

    /// Per-frame values (Hz, or log units after normalization).
    pub fn f0(&self) -> &[f64] {
        &self.f0
    }

    /// Per-frame voicing decisions.
    pub fn voiced(&self) -> &[bool] {
        &self.voiced
    }

    /// Number of frames.
    pub fn len(&self) -> usize {
        self.f0.len()
    }

    /// True when the track holds no frames.
    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    /// Time span covered by frame centers: `(len - 1) * hop` seconds.
    pub fn duration_s(&self) -> f64 {
        (self.f0.len().saturating_sub(1)) as f64 * self.hop_s
    }

    /// Fraction of frames marked voiced.
    pub fn voiced_fraction(&self) -> f64 {
        if self.voiced.is_empty() {
            return 0.0;
        }
        self.voiced.iter().filter(|&&v| v).count() as f64 / self.voiced.len() as f64
    }
}

/// A word-level pitch curve resampled to exactly [`CURVE_POINTS`] values.
#[derive(Clone, Debug, PartialEq)]
pub struct PitchCurve {
    samples: [f64; CURVE_POINTS],
}

impl PitchCurve {
    /// Wraps a slice of exactly [`CURVE_POINTS`] finite samples.
    pub fn from_samples(samples: &[f64]) -> Result<Self, PitchError> {
        if samples.len() != CURVE_POINTS || samples.iter().any(|v| !v.is_finite()) {
            return Err(PitchError::BadCurve {
                expected: CURVE_POINTS,
                got: samples.len(),
            });
        }
        let mut out = [0.0; CURVE_POINTS];
        out.copy_from_slice(samples);
        Ok(Self { samples: out })
    }

    /// The resampled curve values.
    pub fn samples(&self) -> &[f64; CURVE_POINTS] {
        &self.samples
    }
}

/// The first [`VECTOR_DIM`] orthonormal DCT-II coefficients of a word's
/// pitch curve. Coefficient 0 carries the level, 1 the tilt, 2 and 3 the
/// curvature of the contour.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProsodyVector(pub [f64; VECTOR_DIM]);

impl ProsodyVector {
    /// Coefficients as a slice.
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// True when every coefficient is finite.
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

/// How preprocessed tracks are scaled before word curves are cut.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Natural-log f0 with the per-utterance voiced mean subtracted
    /// (speaker- and register-normalized). The default.
    LogMean,
    /// Raw f0 in Hz.
    Raw,
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Normalization::LogMean => write!(f, "log-mean"),
            Normalization::Raw => write!(f, "raw"),
        }
    }
}

impl std::str::FromStr for Normalization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "log-mean" => Ok(Normalization::LogMean),
            "raw" => Ok(Normalization::Raw),
            other => Err(format!("unknown normalization {other:?} (expected log-mean or raw)")),
        }
    }
}

// ---------------------------------------------------------------------------
// f0 extraction
// ---------------------------------------------------------------------------

/// Configuration for [`extract_f0`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct F0Config {
    /// Analysis frame length in seconds.
    pub frame_s: f64,
    /// Hop between frames in seconds.
    pub hop_s: f64,
    /// Lowest f0 candidate in Hz.
    pub f0_min: f64,
    /// Highest f0 candidate in Hz.
    pub f0_max: f64,
    /// Threshold on the normalized difference function below which a lag
    /// minimum is accepted as voiced. Higher values admit noisier frames.
    pub voicing_threshold: f64,
    /// Frames whose mean squared amplitude falls below this floor are
    /// unvoiced without further analysis (silence gate).
    pub power_floor: f64,
}

impl Default for F0Config {
    fn default() -> Self {
        Self {
            frame_s: 0.025,
            hop_s: 0.010,
            f0_min: 60.0,
            f0_max: 400.0,
            voicing_threshold: 0.15,
            power_floor: 1e-9,
        }
    }
}

impl F0Config {
    fn validate(&self, sample_rate: f64) -> Result<(), PitchError> {
        if !(sample_rate.is_finite() && sample_rate >= 1000.0) {
            return Err(PitchError::InvalidSampleRate(sample_rate));
        }
        let positive = [
            ("frame_s", self.frame_s),
            ("hop_s", self.hop_s),
            ("f0_min", self.f0_min),
            ("f0_max", self.f0_max),
            ("voicing_threshold", self.voicing_threshold),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(PitchError::InvalidConfig(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if !(self.power_floor.is_finite() && self.power_floor >= 0.0) {
            return Err(PitchError::InvalidConfig(format!(
                "power_floor must be non-negative, got {}",
                self.power_floor
            )));
        }
        if self.f0_min >= self.f0_max {
            return Err(PitchError::InvalidConfig(format!(
                "f0_min {} must be below f0_max {}",
                self.f0_min, self.f0_max
            )));
        }
        if self.f0_max > sample_rate / 4.0 {
            return Err(PitchError::InvalidConfig(format!(
                "f0_max {} is too high for a {} Hz sample rate",
                self.f0_max, sample_rate
            )));
        }
        // Each frame is compared against lagged copies of itself up to one
        // period of f0_min, so the correlation buffer (frame + maximum lag)
        // spans two such periods. A shorter frame cannot support the range.
        if self.frame_s < 1.0 / self.f0_min {
            return Err(PitchError::FrameTooShort {
                frame_s: self.frame_s,
                f0_min: self.f0_min,
            });
        }
        Ok(())
    }
}

/// Extracts a fundamental-frequency track from a mono waveform.
///
/// One frame is produced per hop over the whole signal. For each frame the
/// squared difference function against lagged copies is cumulative-mean
/// normalized; the first lag minimum below the voicing threshold is refined
/// by parabolic interpolation and converted to Hz. Frames that are silent,
/// aperiodic, or too close to the signal end for a full correlation buffer
/// are marked unvoiced (f0 = 0).
///
/// # Examples
///
/// ```
/// use prosody_mi::pitch::{extract_f0, F0Config};
///
/// let sr = 16_000.0;
/// let tone: Vec<f64> = (0..16_000)
///     .map(|i| 0.4 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / sr).sin())
///     .collect();
/// let track = extract_f0(&tone, sr, &F0Config::default()).unwrap();
/// assert!(track.voiced_fraction() > 0.9);
/// ```
pub fn extract_f0(
    samples: &[f64],
    sample_rate: f64,
    config: &F0Config,
) -> Result<F0Track, PitchError> {
    config.validate(sample_rate)?;
    if samples.is_empty() {
        return Err(PitchError::EmptySignal);
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(PitchError::InvalidConfig(
            "waveform contains non-finite samples".to_string(),
        ));
    }

    let window = (config.frame_s * sample_rate).round() as usize;
    let hop = ((config.hop_s * sample_rate).round() as usize).max(1);
    let tau_min = ((sample_rate / config.f0_max).floor() as usize).max(2);
    let tau_max = (sample_rate / config.f0_min).ceil() as usize;
    let n_frames = samples.len().div_ceil(hop);

    let frames: Vec<(f64, bool)> = (0..n_frames)
        .into_par_iter()
        .map(|k| analyze_frame(samples, k * hop, window, tau_min, tau_max, sample_rate, config))
        .collect();

    let (f0, voiced): (Vec<f64>, Vec<bool>) = frames.into_iter().unzip();
    F0Track::new(hop as f64 / sample_rate, f0, voiced)
}

/// Difference-function analysis of a single frame. Returns `(f0_hz, voiced)`.
fn analyze_frame(
    samples: &[f64],
    start: usize,
    window: usize,
    tau_min: usize,
    tau_max: usize,
    sample_rate: f64,
    config: &F0Config,
) -> (f64, bool) {
    // The lag search needs the frame plus tau_max samples of lookahead.
    if start + window + tau_max > samples.len() {
        return (0.0, false);
    }
    let frame = &samples[start..start + window];
    let power = frame.iter().map(|s| s * s).sum::<f64>() / window as f64;
    if power < config.power_floor {
        return (0.0, false);
    }

    // Squared difference function d(tau) and its cumulative-mean-normalized
    // form d'(tau) = d(tau) * tau / sum_{j<=tau} d(j).
    let mut diff = vec![0.0f64; tau_max + 1];
    for tau in 1..=tau_max {
        let lagged = &samples[start + tau..start + tau + window];
        let mut acc = 0.0;
        for (a, b) in frame.iter().zip(lagged) {
            let d = a - b;
            acc += d * d;
        }
        diff[tau] = acc;
    }
    let mut cmndf = vec![1.0f64; tau_max + 1];
    let mut running = 0.0;
    for tau in 1..=tau_max {
        running += diff[tau];
        cmndf[tau] = if running > 0.0 {
            diff[tau] * tau as f64 / running
        } else {
            1.0
        };
    }

    // First local minimum under the threshold wins; parabolic refinement
    // against the neighboring lags gives sub-sample precision.
    for tau in tau_min..tau_max {
        if cmndf[tau] < config.voicing_threshold && cmndf[tau] <= cmndf[tau + 1] {
            let refined = tau as f64 + parabolic_offset(cmndf[tau - 1], cmndf[tau], cmndf[tau + 1]);
            if refined > 0.0 {
                return (sample_rate / refined, true);
            }
        }
    }
    (0.0, false)
}

/// Vertex offset in [-1, 1] of the parabola through three equally spaced
/// points; 0 when the points are collinear or form a ridge.
fn parabolic_offset(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom <= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-1.0, 1.0)
}

// ---------------------------------------------------------------------------
// Track preprocessing
// ---------------------------------------------------------------------------

/// Configuration for [`preprocess_track`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Voiced frames further than this many octaves from the utterance
    /// median f0 are discarded as tracking errors.
    pub outlier_octaves: f64,
    /// Output scale: mean-centered log-f0 or raw Hz.
    pub normalization: Normalization,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            outlier_octaves: 0.6,
            normalization: Normalization::LogMean,
        }
    }
}

/// Cleans an extracted track: removes octave outliers against the utterance
/// median, fills unvoiced gaps by linear interpolation (edges held at the
/// nearest voiced value), and optionally rescales to mean-centered
/// natural-log f0. The result is fully voiced.
///
/// The log mean is computed over the frames that were voiced and survived
/// outlier removal, not over interpolated fill values.
pub fn preprocess_track(
    track: &F0Track,
    config: &PreprocessConfig,
) -> Result<F0Track, PitchError> {
    if !(config.outlier_octaves.is_finite() && config.outlier_octaves > 0.0) {
        return Err(PitchError::InvalidConfig(format!(
            "outlier_octaves must be positive, got {}",
            config.outlier_octaves
        )));
    }
    let voiced_f0: Vec<f64> = track
        .f0
        .iter()
        .zip(&track.voiced)
        .filter(|(_, &v)| v)
        .map(|(&f, _)| f)
        .collect();
    if voiced_f0.is_empty() {
        return Err(PitchError::NoVoicedFrames);
    }
    let med = math::median(&voiced_f0);

    // Keep voiced frames within the octave window around the median.
    let keep: Vec<bool> = track
        .f0
        .iter()
        .zip(&track.voiced)
        .map(|(&f, &v)| v && (f / med).log2().abs() <= config.outlier_octaves)
        .collect();
    if !keep.iter().any(|&k| k) {
        return Err(PitchError::AllFramesOutliers);
    }

    // Linear interpolation across gaps; constant extension at the edges.
    let n = track.len();
    let mut filled = vec![0.0f64; n];
    let kept_idx: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    let first = kept_idx[0];
    let last = *kept_idx.last().expect("kept_idx is non-empty");
    let mut cursor = 0usize; // index into kept_idx of the previous kept frame
    for i in 0..n {
        filled[i] = if keep[i] {
            while kept_idx[cursor] != i {
                cursor += 1;
            }
            track.f0[i]
        } else if i < first {
            track.f0[first]
        } else if i > last {
            track.f0[last]
        } else {
            let lo = kept_idx[cursor];
            let hi = kept_idx[cursor + 1];
            let t = (i - lo) as f64 / (hi - lo) as f64;
            track.f0[lo] + t * (track.f0[hi] - track.f0[lo])
        };
    }

    let values = match config.normalization {
        Normalization::Raw => filled,
        Normalization::LogMean => {
            let kept_log: Vec<f64> = kept_idx.iter().map(|&i| track.f0[i].ln()).collect();
            let mean_log = math::mean(&kept_log);
            filled.into_iter().map(|f| f.ln() - mean_log).collect()
        }
    };
    Ok(F0Track::from_processed(track.hop_s, values, vec![true; n]))
}

// ---------------------------------------------------------------------------
// Word curves and the cosine transform
// ---------------------------------------------------------------------------

/// Resamples the track values inside `[start_s, end_s]` onto exactly
/// [`CURVE_POINTS`] points by linear interpolation between frame centers.
/// The first and last output samples map to the span boundaries.
///
/// The span must lie inside the track and cover at least two frame centers.
pub fn word_curve(track: &F0Track, start_s: f64, end_s: f64) -> Result<PitchCurve, PitchError> {
    let duration = track.duration_s();
    let eps = 1e-9;
    if !(start_s.is_finite() && end_s.is_finite())
        || start_s < -eps
        || end_s <= start_s
        || end_s > duration + eps
    {
        return Err(PitchError::SpanOutOfRange {
            start_s,
            end_s,
            duration_s: duration,
        });
    }
    let hop = track.hop_s;
    let first_frame = (start_s / hop - eps).ceil().max(0.0) as usize;
    let last_frame = ((end_s / hop + eps).floor() as usize).min(track.len() - 1);
    if last_frame < first_frame + 1 {
        return Err(PitchError::DegenerateSpan { start_s, end_s });
    }

    let n = track.len();
    let mut out = [0.0f64; CURVE_POINTS];
    let step = (end_s - start_s) / (CURVE_POINTS - 1) as f64;
    for (j, slot) in out.iter_mut().enumerate() {
        let t = start_s + step * j as f64;
        let pos = (t / hop).clamp(0.0, (n - 1) as f64);
        let i = (pos.floor() as usize).min(n - 2);
        let frac = pos - i as f64;
        *slot = track.f0[i] * (1.0 - frac) + track.f0[i + 1] * frac;
    }
    PitchCurve::from_samples(&out)
}

/// Scale factor of the orthonormal DCT-II basis vector `k` for length `n`.
fn dct_scale(k: usize, n: usize) -> f64 {
    if k == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    }
}

/// First [`VECTOR_DIM`] coefficients of the orthonormal type-II DCT of a
/// pitch curve:
///
/// ```text
/// c_k = s_k * sum_{i=0}^{N-1} x_i * cos(pi * k * (2i + 1) / (2N))
/// s_0 = sqrt(1/N),  s_k = sqrt(2/N) for k >= 1
/// ```
///
/// With this scaling the transform is an orthonormal projection: a constant
/// curve of value `c` maps to `(sqrt(N) * c, 0, 0, 0)`, and the coefficient
/// energy never exceeds the curve energy.
pub fn dct4(curve: &PitchCurve) -> ProsodyVector {
    let n = CURVE_POINTS as f64;
    let mut coeffs = [0.0f64; VECTOR_DIM];
    for (k, c) in coeffs.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, &x) in curve.samples.iter().enumerate() {
            acc += x * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos();
        }
        *c = dct_scale(k, CURVE_POINTS) * acc;
    }
    ProsodyVector(coeffs)
}

/// Truncated inverse of [`dct4`]: reconstructs an `n`-point curve from the
/// four stored coefficients (all higher coefficients are treated as zero).
/// `n` must be at least [`VECTOR_DIM`].
pub fn idct4(vector: &ProsodyVector, n: usize) -> Result<Vec<f64>, PitchError> {
    if n < VECTOR_DIM {
        return Err(PitchError::ReconstructionTooShort(n));
    }
    let nf = n as f64;
    Ok((0..n)
        .map(|i| {
            vector
                .0
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    dct_scale(k, n) * c * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * nf)).cos()
                })
                .sum()
        })
        .collect())
}

// ---------------------------------------------------------------------------
// f0 track files
// ---------------------------------------------------------------------------

/// Writes a track as tab-separated `time_s  f0_hz  voiced` lines, one frame
/// per line at the track's constant hop. Values round-trip exactly through
/// [`load_f0_track`].
pub fn save_f0_track(track: &F0Track, path: &Path) -> Result<(), PitchError> {
    let mut out = String::with_capacity(track.len() * 24);
    for i in 0..track.len() {
        writeln!(
            out,
            "{}\t{}\t{}",
            i as f64 * track.hop_s,
            track.f0[i],
            u8::from(track.voiced[i])
        )
        .expect("writing to a String cannot fail");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a track written by [`save_f0_track`] (or produced by an external
/// tracker in the same format). The hop is inferred from the first two
/// timestamps and every line is checked against it; voiced frames must have
/// a positive f0.
pub fn load_f0_track(path: &Path) -> Result<F0Track, PitchError> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let parse_err = |line: usize, message: String| PitchError::TrackParse {
        path: display.clone(),
        line,
        message,
    };

    let mut times = Vec::new();
    let mut f0 = Vec::new();
    let mut voiced = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                line_no,
                format!("expected 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        let t: f64 = fields[0]
            .parse()
            .map_err(|e| parse_err(line_no, format!("bad time: {e}")))?;
        let f: f64 = fields[1]
            .parse()
            .map_err(|e| parse_err(line_no, format!("bad f0: {e}")))?;
        let v = match fields[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(parse_err(line_no, format!("bad voiced flag {other:?}")));
            }
        };
        if !t.is_finite() || !f.is_finite() {
            return Err(parse_err(line_no, "non-finite value".to_string()));
        }
        times.push(t);
        f0.push(f);
        voiced.push(v);
    }
    if times.len() < 2 {
        return Err(parse_err(1, "track needs at least two frames".to_string()));
    }
    let hop = times[1] - times[0];
    if !(hop.is_finite() && hop > 0.0) {
        return Err(parse_err(2, format!("non-increasing timestamps (hop {hop})")));
    }
    for (i, &t) in times.iter().enumerate() {
        if (t - i as f64 * hop).abs() > 1e-6 {
            return Err(parse_err(
                i + 1,
                format!("timestamp {t} breaks the constant hop of {hop} s"),
            ));
        }
    }
    F0Track::new(hop, f0, voiced)
}

// ---------------------------------------------------------------------------
// Prosody-vector cache
// ---------------------------------------------------------------------------

/// On-disk cache of extracted [`ProsodyVector`]s, keyed by
/// `(utterance_id, word_index)`.
///
/// The text format is one tab-separated line per word:
/// `utterance_id  word_index  c0  c1  c2  c3`. Entries are stored and
/// written in sorted key order, so identical caches serialize to identical
/// bytes, and floating-point values round-trip exactly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProsodyCache {
    entries: BTreeMap<(String, usize), ProsodyVector>,
}

impl ProsodyCache {
    /// Creates an empty cache.
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces the vector for a word token.
    pub fn insert(&mut self, utterance_id: &str, word_index: usize, vector: ProsodyVector) {
        self.entries
            .insert((utterance_id.to_string(), word_index), vector);
    }

    /// Looks up the vector for a word token.
    pub fn get(&self, utterance_id: &str, word_index: usize) -> Option<&ProsodyVector> {
        self.entries
            .get(&(utterance_id.to_string(), word_index))
    }

    /// Number of cached vectors.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// True when no vectors are cached.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Iterates entries in sorted key order.
    pub fn iter(&self) -> impl Iterator<Item = (&(String, usize), &ProsodyVector)> {
        self.entries.iter()
    }

    /// Writes the cache to a file. Fails if any utterance id contains a tab
    /// or newline, which the line format cannot represent.
    pub fn save(&self, path: &Path) -> Result<(), PitchError> {
        let mut out = String::with_capacity(self.entries.len() * 64);
        for ((utt, idx), vec) in &self.entries {
            if utt.contains('\t') || utt.contains('\n') {
                return Err(PitchError::UnwritableId(utt.clone()));
            }
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                utt, idx, vec.0[0], vec.0[1], vec.0[2], vec.0[3]
            )
            .expect("writing to a String cannot fail");
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Reads a cache written by [`Self::save`]. Duplicate keys are rejected.
    pub fn load(path: &Path) -> Result<Self, PitchError> {
        let text = std::fs::read_to_string(path)?;
        let display = path.display().to_string();
        let parse_err = |line: usize, message: String| PitchError::CacheParse {
            path: display.clone(),
            line,
            message,
        };

        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 2 + VECTOR_DIM {
                return Err(parse_err(
                    line_no,
                    format!("expected {} fields, got {}", 2 + VECTOR_DIM, fields.len()),
                ));
            }
            let word_index: usize = fields[1]
                .parse()
                .map_err(|e| parse_err(line_no, format!("bad word index: {e}")))?;
            let mut coeffs = [0.0f64; VECTOR_DIM];
            for (k, c) in coeffs.iter_mut().enumerate() {
                *c = fields[2 + k]
                    .parse()
                    .map_err(|e| parse_err(line_no, format!("bad coefficient {k}: {e}")))?;
                if !c.is_finite() {
                    return Err(parse_err(line_no, format!("non-finite coefficient {k}")));
                }
            }
            let key = (fields[0].to_string(), word_index);
            if entries.insert(key.clone(), ProsodyVector(coeffs)).is_some() {
                return Err(parse_err(
                    line_no,
                    format!("duplicate entry for ({:?}, {})", key.0, key.1),
                ));
            }
        }
        Ok(Self { entries })
    }
}
