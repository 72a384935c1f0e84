use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{frame_count, LogMelSpectrogram, Waveform};
use crate::error::{Error, Result};

/// Added to mel energies before the log so silence stays finite.
pub const ENERGY_FLOOR: f64 = 1e-10;

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular, area-normalized filters on the HTK mel scale spanning 0 Hz to Nyquist.
///
/// Returns (mel_bins, n_fft / 2 + 1).
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, mel_bins: usize) -> Array2<f64> {
    let nyquist = sample_rate as f64 / 2.0;
    let n_freqs = n_fft / 2 + 1;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..mel_bins + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (mel_bins + 1) as f64))
        .collect();
    let mut bank = Array2::zeros((mel_bins, n_freqs));
    for m in 0..mel_bins {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (hi - lo);
        for k in 0..n_freqs {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let w = ((f - lo) / (center - lo)).min((hi - f) / (hi - center));
            if w > 0.0 {
                bank[[m, k]] = w * norm;
            }
        }
    }
    bank
}

/// Framed FFT + mel projection with a periodic Hann window.
#[derive(Clone)]
pub struct MelExtractor {
    sample_rate: u32,
    win_ms: f64,
    hop_ms: f64,
    win_len: usize,
    hop_len: usize,
    n_fft: usize,
    window: Vec<f64>,
    filterbank: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelExtractor")
            .field("sample_rate", &self.sample_rate)
            .field("mel_bins", &self.filterbank.nrows())
            .field("win_len", &self.win_len)
            .field("hop_len", &self.hop_len)
            .field("n_fft", &self.n_fft)
            .finish()
    }
}

impl MelExtractor {
    pub fn new(sample_rate: u32, mel_bins: usize, win_ms: f64, hop_ms: f64) -> Result<Self> {
        if mel_bins == 0 || sample_rate == 0 {
            return Err(Error::Config("mel bins and sample rate must be positive".into()));
        }
        let win_len = (win_ms * sample_rate as f64 / 1000.0).round() as usize;
        let hop_len = (hop_ms * sample_rate as f64 / 1000.0).round() as usize;
        if win_len == 0 || hop_len == 0 {
            return Err(Error::Config(format!(
                "window {win_ms} ms / hop {hop_ms} ms too short at {sample_rate} Hz"
            )));
        }
        let n_fft = win_len.next_power_of_two();
        let window = (0..win_len)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / win_len as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(MelExtractor {
            sample_rate,
            win_ms,
            hop_ms,
            win_len,
            hop_len,
            n_fft,
            window,
            filterbank: mel_filterbank(sample_rate, n_fft, mel_bins),
            fft,
        })
    }

    pub fn win_len(&self) -> usize {
        self.win_len
    }

    pub fn hop_len(&self) -> usize {
        self.hop_len
    }

    pub fn compute(&self, w: &Waveform) -> Result<LogMelSpectrogram> {
        if w.sample_rate() != self.sample_rate {
            return Err(Error::InvalidInput(format!(
                "expected {} Hz audio, got {} Hz",
                self.sample_rate,
                w.sample_rate()
            )));
        }
        let frames = frame_count(w.len(), self.win_len, self.hop_len);
        if frames == 0 {
            return Err(Error::InvalidInput(format!(
                "clip of {} samples is shorter than one {}-sample window",
                w.len(),
                self.win_len
            )));
        }
        let n_freqs = self.n_fft / 2 + 1;
        let mut power = Array2::<f64>::zeros((n_freqs, frames));
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let samples = w.samples();
        for t in 0..frames {
            let start = t * self.hop_len;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = if i < self.win_len {
                    Complex::new(samples[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, c) in buf.iter().take(n_freqs).enumerate() {
                power[[k, t]] = c.norm_sqr();
            }
        }
        let values = self.filterbank.dot(&power).mapv(|e| (e + ENERGY_FLOOR).ln());
        LogMelSpectrogram::new(values, self.win_ms, self.hop_ms)
    }
}

/// Log-mel spectrogram of a waveform already at its target rate.
pub fn log_mel(w: &Waveform, mel_bins: usize, win_ms: f64, hop_ms: f64) -> Result<LogMelSpectrogram> {
    MelExtractor::new(w.sample_rate(), mel_bins, win_ms, hop_ms)?.compute(w)
}
