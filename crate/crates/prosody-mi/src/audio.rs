//! WAV audio input and output.
//!
//! Reading accepts integer PCM (8/16/24/32-bit) and 32-bit float WAV files
//! with any channel count, downmixing to a mono `f64` signal in [−1, 1].
//! Writing emits 16-bit PCM mono, which is enough for test fixtures and
//! synthesized example signals.

use std::path::Path;
use thiserror::Error;

/// Errors from reading or writing WAV files.
#[derive(Debug, Error)]
pub enum AudioError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("{path}: unsupported format: {message}")]
    UnsupportedFormat { path: String, message: String },
    #[error("cannot write an empty signal")]
    EmptySignal,
    #[error("{path}: {message}")]
    Write { path: String, message: String },
}

/// A mono audio signal with its sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct MonoAudio {
    /// Samples in [−1, 1] (float inputs are passed through unclamped).
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl MonoAudio {
    /// Signal duration in seconds.
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

/// Reads a WAV file and downmixes all channels to mono by averaging.
///
/// Integer samples are scaled by 2^(bits−1) so full scale maps to ±1.
pub fn read_wav_mono(path: &Path) -> Result<MonoAudio, AudioError> {
    let display = path.display().to_string();
    let mut reader = hound::WavReader::open(path).map_err(|e| AudioError::Read {
        path: display.clone(),
        message: e.to_string(),
    })?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(AudioError::UnsupportedFormat {
            path: display,
            message: "zero channels".to_string(),
        });
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(|e| AudioError::Read {
                path: display.clone(),
                message: e.to_string(),
            })?,
        (hound::SampleFormat::Int, bits @ 1..=32) => {
            let scale = f64::from(1u32 << (bits - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<Result<_, _>>()
                .map_err(|e| AudioError::Read {
                    path: display.clone(),
                    message: e.to_string(),
                })?
        }
        (format, bits) => {
            return Err(AudioError::UnsupportedFormat {
                path: display,
                message: format!("{format:?} at {bits} bits per sample"),
            });
        }
    };

    let channels = spec.channels as usize;
    let frames = interleaved.len() / channels;
    let mut samples = Vec::with_capacity(frames);
    for frame in interleaved.chunks_exact(channels) {
        samples.push(frame.iter().sum::<f64>() / channels as f64);
    }
    Ok(MonoAudio {
        samples,
        sample_rate: f64::from(spec.sample_rate),
    })
}

/// Writes a mono signal as 16-bit PCM, clamping samples to [−1, 1].
pub fn write_wav_mono(path: &Path, samples: &[f64], sample_rate: u32) -> Result<(), AudioError> {
    if samples.is_empty() {
        return Err(AudioError::EmptySignal);
    }
    let display = path.display().to_string();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| AudioError::Write {
        path: display.clone(),
        message: e.to_string(),
    })?;
    for &s in samples {
        let clamped = s.clamp(-1.0, 1.0);
        let value = (clamped * f64::from(i16::MAX)).round() as i16;
        writer.write_sample(value).map_err(|e| AudioError::Write {
            path: display.clone(),
            message: e.to_string(),
        })?;
    }
    writer.finalize().map_err(|e| AudioError::Write {
        path: display,
        message: e.to_string(),
    })
}
