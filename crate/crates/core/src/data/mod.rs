//! Seeded synthetic multi-label corpus, manifest I/O and cached features.
//!
//! Every clip is a pure function of `(class specs, seed, clip_id)`: the per-clip
//! RNG is seeded from an FNV-1a hash of the corpus seed and the clip id, so the
//! corpus does not depend on generation order or thread count.

mod manifest;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{
    read_container, write_container, write_wav_pcm16, ElementType, FeaturePipeline, Tensor, TensorContainer,
    Waveform, TARGET_RATE,
};
use crate::kernels::{channel_normalize, frame_gram};
use crate::models::NUM_CLASSES;
use crate::tensor::{FeatureMap, LayerId};

pub use manifest::{load_manifest, read_manifest_rows, write_manifest, ManifestRow, MANIFEST_HEADER};
pub use synth::{
    default_class_specs, pink_noise, render_class, GeneratorKind, Range, Rendered, SynthClassSpec, CLASS_NAMES,
};

pub type Labels = [bool; NUM_CLASSES];

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledClip {
    pub clip_id: String,
    pub waveform: Waveform,
    pub labels: Labels,
}

pub fn labels_to_array(labels: &Labels) -> Array1<f64> {
    labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

/// FNV-1a over the corpus seed and the clip id.
pub fn clip_seed(seed: u64, clip_id: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    seed.to_le_bytes()
        .iter()
        .chain(clip_id.as_bytes())
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

fn quantize_pcm16(x: f64) -> f64 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) / 32768.0
}

fn scale_to_peak(samples: &mut [f64], peak: f64) {
    let max = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        let g = peak / max;
        samples.iter_mut().for_each(|v| *v = quantize_pcm16(*v * g));
    }
}

/// Renders one class alone, scaled to a 0.9 peak, with its ground truth.
pub fn render_event_with(
    spec: &SynthClassSpec,
    rng_seed: u64,
    seconds: f64,
    sample_rate: u32,
) -> Result<(Waveform, Rendered)> {
    spec.validate(sample_rate)?;
    let n = (seconds * sample_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut r = render_class(spec, &mut rng, n, sample_rate);
    let mut samples = r.samples.clone();
    scale_to_peak(&mut samples, 0.9);
    r.samples.clone_from(&samples);
    Ok((Waveform::new(samples, sample_rate)?, r))
}

/// A 10 s, 16 kHz render of one class.
pub fn render_event(spec: &SynthClassSpec, rng_seed: u64) -> Result<Waveform> {
    render_event_with(spec, rng_seed, 10.0, TARGET_RATE).map(|(w, _)| w)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
    pub clip_seconds: f64,
    pub sample_rate: u32,
    pub snr_db: Range,
    pub specs: Vec<SynthClassSpec>,
}

impl DatasetConfig {
    pub fn new(n_train: usize, n_val: usize, n_test: usize, seed: u64) -> Self {
        DatasetConfig {
            n_train,
            n_val,
            n_test,
            seed,
            clip_seconds: 10.0,
            sample_rate: TARGET_RATE,
            snr_db: Range::new(5.0, 20.0),
            specs: default_class_specs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(Error::Config("every split needs at least one clip".into()));
        }
        if !(self.clip_seconds > 0.0) || self.sample_rate == 0 {
            return Err(Error::Config("clip length and sample rate must be positive".into()));
        }
        if self.specs.len() != NUM_CLASSES {
            return Err(Error::Config(format!(
                "expected {NUM_CLASSES} class specs, got {}",
                self.specs.len()
            )));
        }
        for s in &self.specs {
            s.validate(self.sample_rate)?;
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        (self.clip_seconds * self.sample_rate as f64).round() as usize
    }
}

/// 1 to 3 distinct positive classes, uniformly.
pub fn sample_labels(rng: &mut ChaCha8Rng) -> Labels {
    let k = rng.gen_range(1..=3);
    let mut labels = [false; NUM_CLASSES];
    for c in sample(rng, NUM_CLASSES, k) {
        labels[c] = true;
    }
    labels
}

/// Renders the mixture for one clip id.
pub fn synth_clip(cfg: &DatasetConfig, clip_id: &str) -> Result<LabeledClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(clip_seed(cfg.seed, clip_id));
    let labels = sample_labels(&mut rng);
    let n = cfg.num_samples();
    let mut mix = vec![0.0; n];
    for (spec, _) in cfg.specs.iter().zip(labels).filter(|(_, on)| *on) {
        let gain = 10f64.powf(rng.gen_range(-6.0..=0.0) / 20.0);
        let r = render_class(spec, &mut rng, n, cfg.sample_rate);
        mix.iter_mut().zip(&r.samples).for_each(|(m, s)| *m += gain * s);
    }
    let signal_power = mix.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let mut bg = pink_noise(&mut rng, n);
    let bg_power = bg.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let snr = cfg.snr_db.lo + (cfg.snr_db.hi - cfg.snr_db.lo) * rng.gen::<f64>();
    let g = (signal_power / bg_power / 10f64.powf(snr / 10.0)).sqrt();
    bg.iter_mut().zip(&mix).for_each(|(b, m)| *b = m + g * *b);
    let peak = rng.gen_range(0.5..0.95);
    scale_to_peak(&mut bg, peak);
    Ok(LabeledClip {
        clip_id: clip_id.to_string(),
        waveform: Waveform::new(bg, cfg.sample_rate)?,
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn count(self, cfg: &DatasetConfig) -> usize {
        match self {
            Split::Train => cfg.n_train,
            Split::Val => cfg.n_val,
            Split::Test => cfg.n_test,
        }
    }
}

pub fn clip_ids(cfg: &DatasetConfig, split: Split) -> Vec<String> {
    (0..split.count(cfg))
        .map(|i| format!("{}_{i:05}", split.name()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

impl<T> Default for Splits<T> {
    fn default() -> Self {
        Splits {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        }
    }
}

impl<T> Splits<T> {
    pub fn get(&self, split: Split) -> &[T] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Vec<T> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

/// Generates all three splits in memory.
pub fn generate_clips(cfg: &DatasetConfig) -> Result<Splits<LabeledClip>> {
    cfg.validate()?;
    let mut out = Splits::default();
    for split in Split::ALL {
        *out.get_mut(split) = clip_ids(cfg, split)
            .par_iter()
            .map(|id| synth_clip(cfg, id))
            .collect::<Result<Vec<_>>>()?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub rows: Splits<ManifestRow>,
}

impl Manifest {
    pub fn audio_dir(&self) -> PathBuf {
        self.dir.join("audio")
    }

    pub fn csv_path(&self, split: Split) -> PathBuf {
        self.dir.join(format!("{}.csv", split.name()))
    }
}

/// Writes `audio/<clip_id>.wav` and `{train,val,test}.csv` under `out_dir`.
pub fn generate_dataset(cfg: &DatasetConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let audio_dir = out_dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    let mut rows = Splits::default();
    for split in Split::ALL {
        let split_rows = clip_ids(cfg, split)
            .par_iter()
            .map(|id| {
                let clip = synth_clip(cfg, id)?;
                write_wav_pcm16(&audio_dir.join(format!("{id}.wav")), &clip.waveform)?;
                Ok(ManifestRow {
                    clip_id: clip.clip_id,
                    labels: clip.labels,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let csv = out_dir.join(format!("{}.csv", split.name()));
        write_manifest(&csv, &split_rows)?;
        *rows.get_mut(split) = split_rows;
    }
    Ok(Manifest {
        dir: out_dir.to_path_buf(),
        rows,
    })
}

/// Both network inputs of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatures {
    pub clip_id: String,
    pub teacher: Array2<f64>,
    pub student: Array2<f64>,
    pub labels: Labels,
}

impl ClipFeatures {
    pub fn label_array(&self) -> Array1<f64> {
        labels_to_array(&self.labels)
    }
}

pub fn extract_features(clips: &[LabeledClip], pipeline: &FeaturePipeline) -> Result<Vec<ClipFeatures>> {
    clips
        .par_iter()
        .map(|c| {
            let (t, s) = pipeline.extract_pair(&c.waveform)?;
            Ok(ClipFeatures {
                clip_id: c.clip_id.clone(),
                teacher: t.values().clone(),
                student: s.values().clone(),
                labels: c.labels,
            })
        })
        .collect()
}

fn array_tensor(name: String, a: &Array2<f64>) -> Tensor {
    Tensor {
        name,
        dims: vec![a.nrows(), a.ncols()],
        element: ElementType::F32,
        data: a.iter().copied().collect(),
    }
}

fn tensor_array(t: &Tensor) -> Result<Array2<f64>> {
    match t.dims[..] {
        [r, c] => Array2::from_shape_vec((r, c), t.data.clone()).map_err(|e| Error::Format(e.to_string())),
        _ => Err(Error::Format(format!("tensor {} is not rank 2", t.name))),
    }
}

/// Stores features as f32 tensors `<clip_id>/teacher`, `<clip_id>/student`, `<clip_id>/labels`.
pub fn save_features(path: &Path, feats: &[ClipFeatures], metadata: Vec<(String, String)>) -> Result<()> {
    let mut tensors = Vec::with_capacity(3 * feats.len());
    for f in feats {
        tensors.push(array_tensor(format!("{}/teacher", f.clip_id), &f.teacher));
        tensors.push(array_tensor(format!("{}/student", f.clip_id), &f.student));
        tensors.push(Tensor {
            name: format!("{}/labels", f.clip_id),
            dims: vec![NUM_CLASSES],
            element: ElementType::F32,
            data: f.label_array().to_vec(),
        });
    }
    write_container(path, &TensorContainer { metadata, tensors })
}

pub fn load_features(path: &Path) -> Result<Vec<ClipFeatures>> {
    let c = read_container(path)?;
    let mut out = Vec::new();
    for chunk in c.tensors.chunks(3) {
        let [t, s, l] = chunk else {
            return Err(Error::Format("feature tensors must come in triples".into()));
        };
        let clip_id = t
            .name
            .strip_suffix("/teacher")
            .ok_or_else(|| Error::Format(format!("unexpected tensor {}", t.name)))?
            .to_string();
        if s.name != format!("{clip_id}/student") || l.name != format!("{clip_id}/labels") || l.data.len() != NUM_CLASSES
        {
            return Err(Error::Format(format!("malformed feature triple for {clip_id}")));
        }
        let mut labels = [false; NUM_CLASSES];
        for (dst, &v) in labels.iter_mut().zip(&l.data) {
            *dst = v > 0.5;
        }
        out.push(ClipFeatures {
            clip_id,
            teacher: tensor_array(t)?,
            student: tensor_array(s)?,
            labels,
        });
    }
    Ok(out)
}

/// Frame gram of one (bins, frames) input with each bin's time mean removed,
/// so the clip's average spectrum does not swamp frame-to-frame structure.
pub fn centered_frame_gram(input: &Array2<f64>) -> Result<Array2<f64>> {
    let (h, w) = input.dim();
    let mean = input
        .mean_axis(ndarray::Axis(1))
        .ok_or_else(|| Error::InvalidInput("input has no frames".into()))?;
    let centered = input - &mean.insert_axis(ndarray::Axis(1));
    let map = FeatureMap::from_shape_vec([1, 1, h, w], centered.into_raw_vec_and_offset().0, LayerId::new("input"))?;
    Ok(frame_gram(&channel_normalize(&map), 0)?.into_values())
}

/// Mean of frame-gram entries whose lag is within `tol` frames of `lag`.
pub fn band_mean(gram: &Array2<f64>, lag: usize, tol: usize) -> f64 {
    let n = gram.nrows();
    let (lo, hi) = (lag.saturating_sub(tol).max(1), lag + tol);
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for d in lo..=hi {
            if i + d < n {
                sum += gram[[i, i + d]];
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}
