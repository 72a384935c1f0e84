//! Student (CNN-LSTM) and teacher (pooled CNN) models with exposed hint layers.

pub mod layers;
mod student;
mod teacher;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    read_container, write_container, ElementType, LogMelSpectrogram, Tensor, TensorContainer,
};
use crate::tensor::{FeatureMap, LayerId};

pub use student::{build_student, Student, StudentCache, StudentConfig, STUDENT_HIDDEN_SIZES};
pub use teacher::{build_teacher, Teacher, TeacherCache, TeacherConfig};

pub const NUM_CLASSES: usize = 8;

/// A (teacher layer, student layer) pair compared by a similarity loss.
/// Indices refer to each model's hint list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HintPair {
    pub teacher: usize,
    pub student: usize,
}

impl HintPair {
    pub const fn new(teacher: usize, student: usize) -> Self {
        HintPair { teacher, student }
    }
}

impl fmt::Display for HintPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}:s{}", self.teacher, self.student)
    }
}

/// Candidate hint layers of a teacher/student combination.
#[derive(Debug, Clone, PartialEq)]
pub struct HintGrid {
    pub teacher_hints: Vec<LayerId>,
    pub student_hints: Vec<LayerId>,
}

impl HintGrid {
    pub fn new(teacher: &impl Network, student: &impl Network) -> Self {
        HintGrid {
            teacher_hints: teacher.hint_layers(),
            student_hints: student.hint_layers(),
        }
    }

    /// Every pair, ordered lexicographically by (teacher, student).
    pub fn candidates(&self) -> Vec<HintPair> {
        (0..self.teacher_hints.len())
            .flat_map(|t| (0..self.student_hints.len()).map(move |s| HintPair::new(t, s)))
            .collect()
    }

    pub fn describe(&self, pair: HintPair) -> String {
        format!(
            "{}/{}",
            self.teacher_hints
                .get(pair.teacher)
                .map_or("?", |l| l.as_str()),
            self.student_hints
                .get(pair.student)
                .map_or("?", |l| l.as_str())
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelCost {
    /// Twice the multiply-accumulates of one forward pass.
    pub flops: u64,
    pub params: usize,
}

/// Fixed per-mel-bin standardization applied before the first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub mean: Array1<f64>,
    pub inv_std: Array1<f64>,
}

impl InputNorm {
    pub fn identity(bins: usize) -> Self {
        InputNorm {
            mean: Array1::zeros(bins),
            inv_std: Array1::ones(bins),
        }
    }

    /// Per-bin mean and standard deviation over every frame of every input.
    pub fn fit<'a>(inputs: impl IntoIterator<Item = &'a Array2<f64>>) -> Result<Self> {
        let mut sum: Option<Array1<f64>> = None;
        let mut sq: Option<Array1<f64>> = None;
        let mut count = 0usize;
        for x in inputs {
            let s = x.sum_axis(Axis(1));
            let q = x.mapv(|v| v * v).sum_axis(Axis(1));
            match (&mut sum, &mut sq) {
                (Some(a), Some(b)) => {
                    if a.len() != s.len() {
                        return Err(Error::InvalidInput("inputs differ in mel bins".into()));
                    }
                    *a += &s;
                    *b += &q;
                }
                _ => {
                    sum = Some(s);
                    sq = Some(q);
                }
            }
            count += x.ncols();
        }
        let (sum, sq) = match (sum, sq) {
            (Some(a), Some(b)) if count > 0 => (a, b),
            _ => return Err(Error::InvalidInput("no inputs to fit normalization".into())),
        };
        let n = count as f64;
        let mean = sum / n;
        let var = sq / n - &mean * &mean;
        let inv_std = var.mapv(|v| 1.0 / v.max(1e-8).sqrt());
        Ok(InputNorm { mean, inv_std })
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for ((mut row, &m), &s) in out
            .rows_mut()
            .into_iter()
            .zip(self.mean.iter())
            .zip(self.inv_std.iter())
        {
            row.mapv_inplace(|v| (v - m) * s);
        }
        out
    }
}

/// Output of one forward pass on a single input.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
    /// One (1, c, h, w) activation per hint layer, in [`Network::hint_layers`] order.
    pub hints: Vec<FeatureMap>,
}

/// A trainable model with explicit backward pass.
pub trait Network: Clone + Send + Sync {
    type Cache: Send;

    fn arch(&self) -> &'static str;
    fn input_bins(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn hint_layers(&self) -> Vec<LayerId>;
    /// (c, h, w) of every hint activation for an input with `frames` frames.
    fn hint_dims(&self, frames: usize) -> Vec<[usize; 3]>;
    fn input_norm(&self) -> &InputNorm;
    fn set_input_norm(&mut self, norm: InputNorm) -> Result<()>;

    /// Forward pass on a (mel_bins, frames) input, keeping what backward needs.
    fn forward_train(&self, input: ArrayView2<'_, f64>) -> Result<(Forward, Self::Cache)>;

    fn forward(&self, input: ArrayView2<'_, f64>) -> Result<Forward> {
        self.forward_train(input).map(|(f, _)| f)
    }

    /// Accumulates parameter gradients into `grads` given the gradient on the
    /// logits and optional gradients on each hint activation, each (c, h, w).
    fn backward(
        &self,
        cache: &Self::Cache,
        d_logits: ArrayView1<'_, f64>,
        d_hints: &[Option<ArrayView3<'_, f64>>],
        grads: &mut Self,
    );

    /// A copy with every learnable parameter set to zero.
    fn zeros_like(&self) -> Self;
    /// Learnable parameters with stable names, in a fixed order.
    fn params(&self) -> Vec<(String, &[f64])>;
    /// Same order as [`Network::params`].
    fn params_mut(&mut self) -> Vec<&mut [f64]>;
    /// Metadata written into checkpoints.
    fn describe(&self) -> Vec<(String, String)>;

    fn count_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    /// `2 x` multiply-accumulates of one forward pass over `frames` input frames.
    fn count_flops(&self, frames: usize) -> u64;

    fn cost(&self, frames: usize) -> ModelCost {
        ModelCost {
            flops: self.count_flops(frames),
            params: self.count_params(),
        }
    }

    /// Class probabilities plus every hint activation keyed by layer id.
    fn forward_with_hints(
        &self,
        input: &LogMelSpectrogram,
    ) -> Result<(Vec<f64>, BTreeMap<LayerId, FeatureMap>)> {
        let out = self.forward(input.values().view())?;
        let hints = self
            .hint_layers()
            .into_iter()
            .zip(out.hints)
            .collect();
        Ok((out.probs.to_vec(), hints))
    }

    fn to_container(&self) -> TensorContainer {
        let mut metadata = vec![("arch".to_string(), self.arch().to_string())];
        metadata.extend(self.describe());
        let mut tensors: Vec<Tensor> = self
            .params()
            .into_iter()
            .map(|(name, p)| Tensor {
                name,
                dims: vec![p.len()],
                element: ElementType::F64,
                data: p.to_vec(),
            })
            .collect();
        let norm = self.input_norm();
        tensors.push(Tensor {
            name: "input_norm.mean".into(),
            dims: vec![norm.mean.len()],
            element: ElementType::F64,
            data: norm.mean.to_vec(),
        });
        tensors.push(Tensor {
            name: "input_norm.inv_std".into(),
            dims: vec![norm.inv_std.len()],
            element: ElementType::F64,
            data: norm.inv_std.to_vec(),
        });
        TensorContainer { metadata, tensors }
    }

    /// Copies parameters and input normalization from a checkpoint container.
    fn load_container(&mut self, c: &TensorContainer) -> Result<()> {
        if c.meta("arch") != Some(self.arch()) {
            return Err(Error::Format(format!(
                "checkpoint architecture {:?} does not match {}",
                c.meta("arch"),
                self.arch()
            )));
        }
        let names: Vec<String> = self.params().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(self.params_mut()) {
            let t = c
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))?;
            if t.data.len() != slot.len() {
                return Err(Error::Format(format!(
                    "tensor {name} has {} values, model expects {}",
                    t.data.len(),
                    slot.len()
                )));
            }
            slot.copy_from_slice(&t.data);
        }
        let get = |n: &str| {
            c.get(n)
                .map(|t| Array1::from(t.data.clone()))
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {n}")))
        };
        self.set_input_norm(InputNorm {
            mean: get("input_norm.mean")?,
            inv_std: get("input_norm.inv_std")?,
        })
    }

    fn save_checkpoint(&self, path: &Path, extra: &[(String, String)]) -> Result<()> {
        let mut c = self.to_container();
        c.metadata.extend(extra.iter().cloned());
        write_container(path, &c)
    }
}

/// Either model family, as loaded from a checkpoint.
#[derive(Debug, Clone)]
pub enum Model {
    Student(Student),
    Teacher(Teacher),
}

impl Model {
    pub fn load(path: &Path) -> Result<Model> {
        let c = read_container(path)?;
        let field = |k: &str| -> Result<usize> {
            c.meta(k)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {k}")))?
                .parse()
                .map_err(|e| Error::Format(format!("checkpoint field {k}: {e}")))
        };
        match c.meta("arch") {
            Some(student::ARCH) => {
                let cfg = StudentConfig {
                    lstm_hidden: field("lstm_hidden")?,
                    conv_filters: field("conv_filters")?,
                    conv_kernel: field("conv_kernel")?,
                    conv_stride: field("conv_stride")?,
                    num_classes: field("num_classes")?,
                    input_mel_bins: field("input_mel_bins")?,
                };
                let mut m = build_student(&cfg, 0)?;
                m.load_container(&c)?;
                Ok(Model::Student(m))
            }
            Some(teacher::ARCH) => {
                let channels = c
                    .meta("channels")
                    .ok_or_else(|| Error::Format("checkpoint lacks channels".into()))?
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Format(format!("checkpoint channels: {e}")))?;
                let cfg = TeacherConfig {
                    channels,
                    kernel: field("kernel")?,
                    num_classes: field("num_classes")?,
                    input_mel_bins: field("input_mel_bins")?,
                };
                let mut m = build_teacher(&cfg, 0)?;
                m.load_container(&c)?;
                Ok(Model::Teacher(m))
            }
            other => Err(Error::Format(format!("unknown architecture {other:?}"))),
        }
    }

    pub fn forward_with_hints(
        &self,
        input: &LogMelSpectrogram,
    ) -> Result<(Vec<f64>, BTreeMap<LayerId, FeatureMap>)> {
        match self {
            Model::Student(m) => m.forward_with_hints(input),
            Model::Teacher(m) => m.forward_with_hints(input),
        }
    }

    pub fn input_bins(&self) -> usize {
        match self {
            Model::Student(m) => m.input_bins(),
            Model::Teacher(m) => m.input_bins(),
        }
    }
}

pub(crate) fn check_input(x: ArrayView2<'_, f64>, bins: usize) -> Result<()> {
    if x.nrows() != bins || x.ncols() == 0 {
        return Err(Error::InvalidInput(format!(
            "model expects ({bins}, frames) input, got {:?}",
            x.dim()
        )));
    }
    Ok(())
}

pub(crate) fn sigmoid_vec(logits: &Array1<f64>) -> Array1<f64> {
    logits.mapv(crate::kernels::sigmoid)
}
