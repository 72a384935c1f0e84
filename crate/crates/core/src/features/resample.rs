use std::f64::consts::PI;

use super::Waveform;
use crate::error::Result;

/// Zero crossings of the sinc kernel on each side (at the output's cutoff).
const HALF_ZEROS: usize = 32;
/// Passband edge as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.95;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Blackman window on [-1, 1].
fn blackman(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        0.42 + 0.5 * (PI * x).cos() + 0.08 * (2.0 * PI * x).cos()
    }
}

/// Band-limited resampling with a Blackman-windowed sinc kernel.
///
/// Output length is `ceil(len * target / source)`; equal rates return the input unchanged.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    let source_rate = w.sample_rate();
    if source_rate == target_rate {
        return Ok(w.clone());
    }
    let input = w.samples();
    let out_len = ((input.len() as u64 * target_rate as u64).div_ceil(source_rate as u64)) as usize;
    let ratio = target_rate as f64 / source_rate as f64;
    // cutoff in cycles per input sample
    let cutoff = 0.5 * ratio.min(1.0) * ROLLOFF;
    let half_width = HALF_ZEROS as f64 / (2.0 * cutoff);
    let mut out = Vec::with_capacity(out_len.max(1));
    for n in 0..out_len.max(1) {
        let pos = n as f64 / ratio;
        let lo = (pos - half_width).ceil().max(0.0) as usize;
        let hi = ((pos + half_width).floor() as usize).min(input.len() - 1);
        let mut acc = 0.0;
        for (k, &s) in input.iter().enumerate().take(hi + 1).skip(lo) {
            let d = pos - k as f64;
            acc += s * 2.0 * cutoff * sinc(2.0 * cutoff * d) * blackman(d / half_width);
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;

    fn tone(freq: f64, rate: u32, secs: f64) -> Waveform {
        let n = (rate as f64 * secs) as usize;
        Waveform::new(
            (0..n)
                .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin())
                .collect(),
            rate,
        )
        .unwrap()
    }

    fn peak_hz(w: &Waveform) -> f64 {
        let n = w.len();
        let mut buf: Vec<Complex<f64>> = w.samples().iter().map(|&s| Complex::new(s, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let k = buf[..n / 2]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap()
            .0;
        k as f64 * w.sample_rate() as f64 / n as f64
    }

    #[test]
    fn identity_rate() {
        let w = tone(440.0, 16_000, 0.1);
        assert_eq!(resample(&w, 16_000).unwrap(), w);
    }

    #[test]
    fn halves_length() {
        let w = Waveform::new(vec![0.0; 320_000], 32_000).unwrap();
        let r = resample(&w, 16_000).unwrap();
        assert_eq!(r.len(), 160_000);
        assert_eq!(r.sample_rate(), 16_000);
    }

    #[test]
    fn tone_peak_preserved() {
        let w = tone(440.0, 48_000, 1.0);
        let r = resample(&w, 16_000).unwrap();
        assert!((peak_hz(&r) - 440.0).abs() <= 1.0);
        assert!((r.duration_secs() - w.duration_secs()).abs() <= 1.0 / 16_000.0);
    }

    #[test]
    fn matches_ideal_sinc_interpolation_on_tone() {
        // an in-band tone downsampled should equal the tone sampled directly at the new rate
        let w = tone(440.0, 32_000, 0.5);
        let r = resample(&w, 16_000).unwrap();
        let ideal = tone(440.0, 16_000, 0.5);
        // skip the edges where the kernel is truncated
        let err = r.samples()[400..7600]
            .iter()
            .zip(&ideal.samples()[400..7600])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "max error {err}");
    }

    #[test]
    fn upsampling_keeps_tone() {
        let w = tone(1000.0, 8_000, 0.5);
        let r = resample(&w, 16_000).unwrap();
        assert_eq!(r.len(), 8_000);
        assert!((peak_hz(&r) - 1000.0).abs() <= 2.0);
    }
}
