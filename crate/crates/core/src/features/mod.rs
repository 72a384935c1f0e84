//! Waveform handling and log-mel feature extraction.
//!
//! Teacher inputs use 64 mel bins, student inputs 20, both with 25 ms windows and
//! a 10 ms hop at 16 kHz, so a 10 s clip yields 998 frames.

mod container;
mod mel;
mod resample;
mod wav;

use ndarray::Array2;

use crate::error::{Error, Result};

pub use container::{read_container, write_container, ElementType, Tensor, TensorContainer};
pub use mel::{log_mel, mel_filterbank, MelExtractor, ENERGY_FLOOR};
pub use resample::resample;
pub use wav::{read_wav, write_wav_pcm16};

pub const TARGET_RATE: u32 = 16_000;
pub const TEACHER_MEL_BINS: usize = 64;
pub const STUDENT_MEL_BINS: usize = 20;
pub const WINDOW_MS: f64 = 25.0;
pub const HOP_MS: f64 = 10.0;
pub const CLIP_SECONDS: f64 = 10.0;

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidInput("waveform has no samples".into()));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Zero-pads or truncates at the end to exactly `seconds`.
    pub fn fit_to(&self, seconds: f64) -> Waveform {
        let n = (seconds * self.sample_rate as f64).round() as usize;
        let mut samples = self.samples.clone();
        samples.resize(n.max(1), 0.0);
        Waveform {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

/// Log-mel energies, (mel_bins, frames).
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    values: Array2<f64>,
    win_ms: f64,
    hop_ms: f64,
}

impl LogMelSpectrogram {
    pub fn new(values: Array2<f64>, win_ms: f64, hop_ms: f64) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("spectrogram has non-finite values".into()));
        }
        Ok(LogMelSpectrogram {
            values,
            win_ms,
            hop_ms,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mel_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn win_ms(&self) -> f64 {
        self.win_ms
    }

    pub fn hop_ms(&self) -> f64 {
        self.hop_ms
    }
}

/// Number of full windows in `num_samples`.
pub fn frame_count(num_samples: usize, win: usize, hop: usize) -> usize {
    if num_samples < win {
        0
    } else {
        (num_samples - win) / hop + 1
    }
}

/// Reusable extractor for the teacher/student feature pair.
pub struct FeaturePipeline {
    clip_seconds: f64,
    teacher: MelExtractor,
    student: MelExtractor,
}

impl FeaturePipeline {
    pub fn new(clip_seconds: f64) -> Result<Self> {
        if !(clip_seconds > 0.0) {
            return Err(Error::Config(format!(
                "clip length must be positive, got {clip_seconds}"
            )));
        }
        Ok(FeaturePipeline {
            clip_seconds,
            teacher: MelExtractor::new(TARGET_RATE, TEACHER_MEL_BINS, WINDOW_MS, HOP_MS)?,
            student: MelExtractor::new(TARGET_RATE, STUDENT_MEL_BINS, WINDOW_MS, HOP_MS)?,
        })
    }

    pub fn clip_seconds(&self) -> f64 {
        self.clip_seconds
    }

    /// Frames produced for one clip.
    pub fn frames(&self) -> usize {
        let n = (self.clip_seconds * TARGET_RATE as f64).round() as usize;
        frame_count(n, self.teacher.win_len(), self.teacher.hop_len())
    }

    /// Resamples to 16 kHz, fits to the clip length, then extracts both inputs.
    pub fn extract_pair(&self, w: &Waveform) -> Result<(LogMelSpectrogram, LogMelSpectrogram)> {
        let resampled = resample(w, TARGET_RATE)?;
        let fitted = resampled.fit_to(self.clip_seconds);
        Ok((self.teacher.compute(&fitted)?, self.student.compute(&fitted)?))
    }
}

/// Teacher (64-bin) and student (20-bin) inputs of one 10 s clip.
pub fn extract_pair(w: &Waveform) -> Result<(LogMelSpectrogram, LogMelSpectrogram)> {
    FeaturePipeline::new(CLIP_SECONDS)?.extract_pair(w)
}
