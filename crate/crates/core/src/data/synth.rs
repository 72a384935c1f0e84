//! Procedural sound classes standing in for the eight urban-sound categories.
//!
//! Each class belongs to one acoustic family: repetitive tonal (sirens, barks),
//! impulsive (impacts), stationary broadband (engines, saws) or nonstationary
//! (music, voice). Every render is unit-RMS before mixing.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum GeneratorKind {
    RepetitiveTonal,
    Impulsive,
    StationaryBroadband,
    Nonstationary,
}

/// Inclusive real range.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.hi > self.lo {
            rng.gen_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

/// Parameters of one synthetic class.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthClassSpec {
    pub class_id: usize,
    pub kind: GeneratorKind,
    /// Fundamental frequency, Hz.
    pub fundamental_hz: Range,
    /// Repetition period as a fraction of the clip length (repetitive kinds).
    pub period_fraction: Range,
    /// Fraction of each period that is sounding (1 = continuous).
    pub duty: Range,
    /// Events per second (impulsive kinds).
    pub event_rate: Range,
    /// Exponential decay time of one impulse, seconds.
    pub decay_s: Range,
    /// Upper edge of the noise component, Hz.
    pub brightness_hz: Range,
    /// Level of the mixture over the pink-noise background, dB.
    pub snr_db: Range,
}

pub const CLASS_NAMES: [&str; 8] = [
    "engine",
    "machinery-impact",
    "non-machinery-impact",
    "powered-saw",
    "alert-signal",
    "music",
    "human-voice",
    "dog",
];

impl SynthClassSpec {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        let ranges = [
            self.fundamental_hz,
            self.period_fraction,
            self.duty,
            self.event_rate,
            self.decay_s,
            self.brightness_hz,
            self.snr_db,
        ];
        if ranges.iter().any(|r| !r.valid()) {
            return Err(Error::Config(format!(
                "class {}: empty or non-finite parameter range",
                self.class_id
            )));
        }
        if self.fundamental_hz.lo <= 0.0 || self.fundamental_hz.hi >= nyquist || self.brightness_hz.hi >= nyquist {
            return Err(Error::Config(format!(
                "class {}: frequencies must lie in (0, {nyquist}) Hz",
                self.class_id
            )));
        }
        if self.kind == GeneratorKind::RepetitiveTonal && self.period_fraction.hi > 1.0 / 3.0 {
            return Err(Error::Config(format!(
                "class {}: repetitive classes need at least 3 periods per clip",
                self.class_id
            )));
        }
        if self.period_fraction.lo <= 0.0 || self.duty.lo <= 0.0 || self.duty.hi > 1.0 || self.decay_s.lo <= 0.0 {
            return Err(Error::Config(format!(
                "class {}: period, duty and decay must be positive",
                self.class_id
            )));
        }
        Ok(())
    }
}

const fn spec(
    class_id: usize,
    kind: GeneratorKind,
    f0: (f64, f64),
    period: (f64, f64),
    duty: (f64, f64),
    rate: (f64, f64),
    decay: (f64, f64),
    bright: (f64, f64),
) -> SynthClassSpec {
    SynthClassSpec {
        class_id,
        kind,
        fundamental_hz: Range::new(f0.0, f0.1),
        period_fraction: Range::new(period.0, period.1),
        duty: Range::new(duty.0, duty.1),
        event_rate: Range::new(rate.0, rate.1),
        decay_s: Range::new(decay.0, decay.1),
        brightness_hz: Range::new(bright.0, bright.1),
        snr_db: Range::new(5.0, 20.0),
    }
}

/// The default eight-class taxonomy, indexed like [`CLASS_NAMES`].
pub fn default_class_specs() -> Vec<SynthClassSpec> {
    use GeneratorKind::*;
    vec![
        spec(0, StationaryBroadband, (35.0, 70.0), (0.1, 0.3), (1.0, 1.0), (0.0, 0.0), (0.1, 0.1), (500.0, 900.0)),
        spec(1, Impulsive, (60.0, 160.0), (0.1, 0.3), (1.0, 1.0), (0.3, 0.6), (0.015, 0.04), (1500.0, 3000.0)),
        spec(2, Impulsive, (800.0, 2000.0), (0.1, 0.3), (1.0, 1.0), (0.3, 0.6), (0.005, 0.015), (5000.0, 7500.0)),
        spec(3, StationaryBroadband, (140.0, 260.0), (0.1, 0.3), (1.0, 1.0), (0.0, 0.0), (0.1, 0.1), (2500.0, 5000.0)),
        spec(4, RepetitiveTonal, (650.0, 1100.0), (0.12, 0.3), (1.0, 1.0), (0.0, 0.0), (0.1, 0.1), (100.0, 100.0)),
        spec(5, Nonstationary, (220.0, 880.0), (0.1, 0.3), (1.0, 1.0), (3.0, 6.0), (0.1, 0.1), (100.0, 100.0)),
        spec(6, Nonstationary, (100.0, 240.0), (0.1, 0.3), (1.0, 1.0), (3.0, 5.0), (0.1, 0.1), (100.0, 100.0)),
        spec(7, RepetitiveTonal, (350.0, 600.0), (0.12, 0.3), (0.25, 0.4), (0.0, 0.0), (0.1, 0.1), (100.0, 100.0)),
    ]
}

/// A rendered class signal plus its generator ground truth.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub samples: Vec<f64>,
    /// Intervals (seconds) containing the events of impulsive classes.
    pub events: Vec<(f64, f64)>,
    /// Repetition period in seconds for repetitive classes.
    pub period_s: Option<f64>,
}

fn normalize_rms(samples: &mut [f64]) {
    let rms = (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt();
    if rms > 0.0 {
        samples.iter_mut().for_each(|s| *s /= rms);
    }
}

/// One-pole low-pass with cutoff `fc`.
fn lowpass(x: &mut [f64], fc: f64, rate: f64) {
    let a = (-2.0 * PI * fc / rate).exp();
    let mut y = 0.0;
    for v in x.iter_mut() {
        y = (1.0 - a) * *v + a * y;
        *v = y;
    }
}

fn highpass(x: &mut [f64], fc: f64, rate: f64) {
    let mut low = x.to_vec();
    lowpass(&mut low, fc, rate);
    x.iter_mut().zip(low).for_each(|(v, l)| *v -= l);
}

fn white(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Pink noise via the Paul Kellet filter.
pub fn pink_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let w: f64 = rng.gen_range(-1.0..1.0);
        b[0] = 0.99886 * b[0] + w * 0.0555179;
        b[1] = 0.99332 * b[1] + w * 0.0750759;
        b[2] = 0.96900 * b[2] + w * 0.1538520;
        b[3] = 0.86650 * b[3] + w * 0.3104856;
        b[4] = 0.55000 * b[4] + w * 0.5329522;
        b[5] = -0.7616 * b[5] - w * 0.0168980;
        out.push(b.iter().sum::<f64>() + w * 0.5362);
        b[6] = w * 0.115926;
    }
    out
}

/// Sum of harmonics of a time-varying fundamental, skipping partials above `max_hz`.
fn harmonic_tone(freqs: &[f64], rate: f64, harmonics: &[f64], max_hz: f64) -> Vec<f64> {
    let mut phase = 0.0;
    freqs
        .iter()
        .map(|&f| {
            phase += 2.0 * PI * f / rate;
            harmonics
                .iter()
                .enumerate()
                .filter(|(k, _)| f * (*k as f64 + 1.0) < max_hz)
                .map(|(k, a)| a * ((k as f64 + 1.0) * phase).sin())
                .sum()
        })
        .collect()
}

fn raised_cosine_gate(pos: f64, duty: f64) -> f64 {
    // pos in [0, 1) within a period; smooth on/off over 10% of the sounding part
    if pos >= duty {
        return 0.0;
    }
    let edge = 0.1 * duty;
    if pos < edge {
        0.5 - 0.5 * (PI * pos / edge).cos()
    } else if pos > duty - edge {
        0.5 - 0.5 * (PI * (duty - pos) / edge).cos()
    } else {
        1.0
    }
}

fn render_repetitive(s: &SynthClassSpec, rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Rendered {
    let duration = n as f64 / rate;
    let period = s.period_fraction.sample(rng) * duration;
    let duty = s.duty.sample(rng);
    let f0 = s.fundamental_hz.sample(rng);
    let depth = rng.gen_range(0.3..0.7);
    let offset = rng.gen_range(0.0..period);
    let freqs: Vec<f64> = (0..n)
        .map(|i| {
            let pos = ((i as f64 / rate + offset) / period).fract();
            if duty >= 1.0 {
                // rising sweep then fall, like a wailing siren
                let tri = if pos < 0.7 { pos / 0.7 } else { (1.0 - pos) / 0.3 };
                f0 * (1.0 + depth * tri)
            } else {
                // pulse with a downward glide
                f0 * (1.0 + depth * (1.0 - pos / duty).max(0.0))
            }
        })
        .collect();
    let harmonics = if duty >= 1.0 {
        vec![1.0, 0.35, 0.15]
    } else {
        vec![1.0, 0.6, 0.4, 0.25, 0.15]
    };
    let mut samples = harmonic_tone(&freqs, rate, &harmonics, rate / 2.0 * 0.9);
    if duty < 1.0 {
        for (i, v) in samples.iter_mut().enumerate() {
            let pos = ((i as f64 / rate + offset) / period).fract();
            *v *= raised_cosine_gate(pos, duty);
        }
    }
    normalize_rms(&mut samples);
    Rendered {
        samples,
        events: Vec::new(),
        period_s: Some(period),
    }
}

fn render_impulsive(s: &SynthClassSpec, rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Rendered {
    let duration = n as f64 / rate;
    let count = ((s.event_rate.sample(rng) * duration).round() as usize).max(1);
    let mut samples = vec![0.0; n];
    let mut events = Vec::with_capacity(count);
    // spread onsets over equal slots so events never overlap
    let slot = duration / count as f64;
    for e in 0..count {
        let tau = s.decay_s.sample(rng);
        let len = 5.0 * tau;
        let onset = e as f64 * slot + rng.gen_range(0.0..(slot - len).max(1e-3));
        let start = (onset * rate) as usize;
        let end = (((onset + len) * rate) as usize).min(n);
        let f0 = s.fundamental_hz.sample(rng);
        let mut burst = white(rng, end - start);
        lowpass(&mut burst, s.brightness_hz.sample(rng), rate);
        for (k, v) in burst.iter_mut().enumerate() {
            let t = k as f64 / rate;
            let env = (-t / tau).exp();
            *v = env * (0.6 * *v + 0.4 * (2.0 * PI * f0 * t).sin());
        }
        samples[start..end].copy_from_slice(&burst);
        events.push((start as f64 / rate, end as f64 / rate));
    }
    normalize_rms(&mut samples);
    Rendered {
        samples,
        events,
        period_s: None,
    }
}

fn render_stationary(s: &SynthClassSpec, rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Rendered {
    let f0 = s.fundamental_hz.sample(rng);
    let wobble_hz = rng.gen_range(0.2..0.8);
    let wobble_depth = rng.gen_range(0.0..0.03);
    let wobble_phase = rng.gen_range(0.0..2.0 * PI);
    let freqs: Vec<f64> = (0..n)
        .map(|i| f0 * (1.0 + wobble_depth * (2.0 * PI * wobble_hz * i as f64 / rate + wobble_phase).sin()))
        .collect();
    let harmonics: Vec<f64> = (1..=24).map(|k| 1.0 / k as f64).collect();
    let mut tone = harmonic_tone(&freqs, rate, &harmonics, s.brightness_hz.hi * 1.5);
    normalize_rms(&mut tone);
    let mut noise = white(rng, n);
    lowpass(&mut noise, s.brightness_hz.sample(rng), rate);
    if s.fundamental_hz.lo > 100.0 {
        highpass(&mut noise, s.brightness_hz.lo * 0.5, rate);
    }
    normalize_rms(&mut noise);
    let mut samples: Vec<f64> = tone.iter().zip(&noise).map(|(t, z)| t + 0.5 * z).collect();
    normalize_rms(&mut samples);
    Rendered {
        samples,
        events: Vec::new(),
        period_s: None,
    }
}

fn render_nonstationary(s: &SynthClassSpec, rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Rendered {
    let voice = s.fundamental_hz.hi < 400.0;
    let mut samples = vec![0.0; n];
    let mut t = rng.gen_range(0.0..0.1);
    let duration = n as f64 / rate;
    let mut phase = 0.0;
    while t < duration {
        let note_len = 1.0 / s.event_rate.sample(rng);
        let gap = if voice { rng.gen_range(0.02..0.2) } else { rng.gen_range(0.0..0.05) };
        let f_start = s.fundamental_hz.sample(rng);
        let f_end = if voice { f_start * rng.gen_range(0.7..1.3) } else { f_start };
        // two spectral peaks that move from note to note
        let formants = [rng.gen_range(300.0..900.0), rng.gen_range(900.0..2500.0)];
        let start = (t * rate) as usize;
        let end = (((t + note_len) * rate) as usize).min(n);
        for (k, v) in samples[start..end].iter_mut().enumerate() {
            let u = k as f64 / (end - start).max(1) as f64;
            let f = f_start + (f_end - f_start) * u;
            phase += 2.0 * PI * f / rate;
            let env = (PI * u).sin().powf(if voice { 1.0 } else { 0.3 });
            let mut acc = 0.0;
            for h in 1..=12 {
                let fh = f * h as f64;
                if fh > 7000.0 {
                    break;
                }
                let gain = if voice {
                    formants
                        .iter()
                        .map(|&fc| (-((fh - fc) / 200.0).powi(2)).exp())
                        .sum::<f64>()
                        + 0.05
                } else {
                    1.0 / (h * h) as f64
                };
                acc += gain * (h as f64 * phase).sin();
            }
            *v += env * acc;
        }
        t += note_len + gap;
    }
    normalize_rms(&mut samples);
    Rendered {
        samples,
        events: Vec::new(),
        period_s: None,
    }
}

/// Renders one class signal of `num_samples` at `sample_rate`.
pub fn render_class(
    spec: &SynthClassSpec,
    rng: &mut ChaCha8Rng,
    num_samples: usize,
    sample_rate: u32,
) -> Rendered {
    let rate = sample_rate as f64;
    match spec.kind {
        GeneratorKind::RepetitiveTonal => render_repetitive(spec, rng, num_samples, rate),
        GeneratorKind::Impulsive => render_impulsive(spec, rng, num_samples, rate),
        GeneratorKind::StationaryBroadband => render_stationary(spec, rng, num_samples, rate),
        GeneratorKind::Nonstationary => render_nonstationary(spec, rng, num_samples, rate),
    }
}
