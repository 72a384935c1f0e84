//! Flat key-value run configuration, stored as TOML.
//!
//! ```toml
//! setup = "BCE+KD+SP+IUSP"
//! lstm_hidden = 32
//! seed = 3
//! hint_sp = "1,0"      # teacher pool index, student layer index; "none" disables
//! data_dir = "data"
//! teacher = "teacher/best.ckpt"
//! ```
//!
//! Missing keys take the defaults of [`TrainConfig::new`]; missing hint keys
//! take the setup's default pairs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::setup::{Setup, TrainConfig};
use crate::error::{Error, Result};
use crate::kernels::SquashParams;
use crate::losses::LossWeights;
use crate::models::HintPair;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub setup: String,
    pub lstm_hidden: Option<usize>,
    pub seed: Option<u64>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub alpha_bce: Option<f64>,
    pub alpha_kd: Option<f64>,
    pub alpha_sp: Option<f64>,
    pub alpha_iusp: Option<f64>,
    pub kd_temperature: Option<f64>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub hint_sp: Option<String>,
    pub hint_iusp: Option<String>,
    /// Directory holding `{train,val,test}.csv` and `audio/`.
    pub data_dir: Option<PathBuf>,
    /// Cached feature container prefix (`<prefix>.{train,val,test}.feat`).
    pub features: Option<PathBuf>,
    /// Clip length used when features are extracted on the fly.
    pub clip_seconds: Option<f64>,
    pub teacher: Option<PathBuf>,
    /// `"student"` (default) or `"teacher"` for supervised teacher training.
    pub model: Option<String>,
    pub teacher_channels: Option<Vec<usize>>,
    pub teacher_kernel: Option<usize>,
}

pub fn parse_hint_pair(s: &str) -> Result<Option<HintPair>> {
    if s.trim().eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let bad = || Error::Config(format!("hint pair `{s}` is not `teacher,student` or `none`"));
    let (t, st) = s.split_once(',').ok_or_else(bad)?;
    Ok(Some(HintPair::new(
        t.trim().parse().map_err(|_| bad())?,
        st.trim().parse().map_err(|_| bad())?,
    )))
}

pub fn format_hint_pair(p: Option<HintPair>) -> String {
    p.map_or_else(|| "none".into(), |p| format!("{},{}", p.teacher, p.student))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// A fully explicit config describing `cfg`.
    pub fn from_train(cfg: &TrainConfig) -> Self {
        let w = &cfg.weights;
        RunConfig {
            setup: cfg.setup.name().into(),
            lstm_hidden: Some(cfg.lstm_hidden),
            seed: Some(cfg.seed),
            batch_size: Some(cfg.batch_size),
            lr: Some(cfg.lr),
            max_epochs: Some(cfg.max_epochs),
            patience: Some(cfg.patience),
            alpha_bce: Some(w.alpha_bce),
            alpha_kd: Some(w.alpha_kd),
            alpha_sp: Some(w.alpha_sp),
            alpha_iusp: Some(w.alpha_iusp),
            kd_temperature: Some(w.kd_temperature),
            gamma: Some(w.squash.gamma),
            delta: Some(w.squash.delta),
            hint_sp: Some(format_hint_pair(cfg.hint_pair_sp)),
            hint_iusp: Some(format_hint_pair(cfg.hint_pair_iusp)),
            data_dir: None,
            features: None,
            clip_seconds: None,
            teacher: None,
            model: None,
            teacher_channels: None,
            teacher_kernel: None,
        }
    }

    pub fn to_train(&self) -> Result<TrainConfig> {
        let setup: Setup = self.setup.parse()?;
        let mut cfg = TrainConfig::new(setup);
        let d = LossWeights::default();
        cfg.lstm_hidden = self.lstm_hidden.unwrap_or(cfg.lstm_hidden);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.batch_size = self.batch_size.unwrap_or(cfg.batch_size);
        cfg.lr = self.lr.unwrap_or(cfg.lr);
        cfg.max_epochs = self.max_epochs.unwrap_or(cfg.max_epochs);
        cfg.patience = self.patience.unwrap_or(cfg.patience);
        cfg.weights = LossWeights {
            alpha_bce: self.alpha_bce.unwrap_or(d.alpha_bce),
            alpha_kd: self.alpha_kd.unwrap_or(d.alpha_kd),
            alpha_sp: self.alpha_sp.unwrap_or(d.alpha_sp),
            alpha_iusp: self.alpha_iusp.unwrap_or(d.alpha_iusp),
            kd_temperature: self.kd_temperature.unwrap_or(d.kd_temperature),
            squash: SquashParams::new(
                self.gamma.unwrap_or(d.squash.gamma),
                self.delta.unwrap_or(d.squash.delta),
            )?,
        };
        if let Some(s) = &self.hint_sp {
            cfg.hint_pair_sp = parse_hint_pair(s)?;
        }
        if let Some(s) = &self.hint_iusp {
            cfg.hint_pair_iusp = parse_hint_pair(s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
