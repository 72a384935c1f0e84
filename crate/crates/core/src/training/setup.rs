use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::models::{HintPair, STUDENT_HIDDEN_SIZES};

/// Which loss terms are active. Inactive terms get a zero weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setup {
    #[serde(rename = "BCE")]
    Bce,
    #[serde(rename = "BCE+KD")]
    BceKd,
    #[serde(rename = "BCE+KD+SP")]
    BceKdSp,
    #[serde(rename = "BCE+KD+IUSP")]
    BceKdIusp,
    #[serde(rename = "BCE+KD+SP+IUSP")]
    BceKdSpIusp,
}

impl Setup {
    pub const ALL: [Setup; 5] = [
        Setup::Bce,
        Setup::BceKd,
        Setup::BceKdSp,
        Setup::BceKdIusp,
        Setup::BceKdSpIusp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Setup::Bce => "BCE",
            Setup::BceKd => "BCE+KD",
            Setup::BceKdSp => "BCE+KD+SP",
            Setup::BceKdIusp => "BCE+KD+IUSP",
            Setup::BceKdSpIusp => "BCE+KD+SP+IUSP",
        }
    }

    pub fn uses_kd(self) -> bool {
        self != Setup::Bce
    }

    pub fn uses_sp(self) -> bool {
        matches!(self, Setup::BceKdSp | Setup::BceKdSpIusp)
    }

    pub fn uses_iusp(self) -> bool {
        matches!(self, Setup::BceKdIusp | Setup::BceKdSpIusp)
    }

    pub fn needs_teacher(self) -> bool {
        self.uses_kd()
    }

    /// `base` with the weights of inactive terms set to zero.
    pub fn weights(self, base: &LossWeights) -> LossWeights {
        LossWeights {
            alpha_kd: if self.uses_kd() { base.alpha_kd } else { 0.0 },
            alpha_sp: if self.uses_sp() { base.alpha_sp } else { 0.0 },
            alpha_iusp: if self.uses_iusp() { base.alpha_iusp } else { 0.0 },
            ..*base
        }
    }

    /// Tuned (teacher pool, student layer) pairs: SP on pool2/conv; IUSP on
    /// pool1/conv alone and on pool2/conv when combined with SP.
    pub fn default_hints(self) -> (Option<HintPair>, Option<HintPair>) {
        let sp = self.uses_sp().then_some(HintPair::new(1, 0));
        let iusp = match self {
            Setup::BceKdIusp => Some(HintPair::new(0, 0)),
            Setup::BceKdSpIusp => Some(HintPair::new(1, 0)),
            _ => None,
        };
        (sp, iusp)
    }
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(' ', "");
        Setup::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown setup `{s}` (expected one of {})",
                    Setup::ALL.map(Setup::name).join(", ")
                ))
            })
    }
}

/// Everything that determines one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub setup: Setup,
    pub lstm_hidden: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub hint_pair_sp: Option<HintPair>,
    pub hint_pair_iusp: Option<HintPair>,
}

impl TrainConfig {
    pub fn new(setup: Setup) -> Self {
        let (hint_pair_sp, hint_pair_iusp) = setup.default_hints();
        TrainConfig {
            setup,
            lstm_hidden: STUDENT_HIDDEN_SIZES[3],
            lr: 1e-4,
            max_epochs: 300,
            patience: 20,
            batch_size: 16,
            seed: 0,
            weights: LossWeights::default(),
            hint_pair_sp,
            hint_pair_iusp,
        }
    }

    /// The same run with another setup and that setup's default hint pairs.
    pub fn with_setup(&self, setup: Setup) -> Self {
        let (sp, iusp) = setup.default_hints();
        TrainConfig {
            setup,
            hint_pair_sp: sp,
            hint_pair_iusp: iusp,
            ..self.clone()
        }
    }

    /// Weights actually applied: inactive terms zeroed.
    pub fn effective_weights(&self) -> LossWeights {
        self.setup.weights(&self.weights)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lstm_hidden == 0 {
            return Err(Error::Config("lstm_hidden must be positive".into()));
        }
        // max_epochs = 0 is allowed as "evaluate the initial weights only"
        if self.max_epochs > 0 && self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "patience ({}) must be below max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.setup.uses_sp() && self.hint_pair_sp.is_none() {
            return Err(Error::Config(format!("setup {} needs hint_pair_sp", self.setup)));
        }
        if self.setup.uses_iusp() && self.hint_pair_iusp.is_none() {
            return Err(Error::Config(format!("setup {} needs hint_pair_iusp", self.setup)));
        }
        Ok(())
    }
}
