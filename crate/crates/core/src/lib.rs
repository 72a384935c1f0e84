//! Knowledge distillation for audio tagging with batch-level (SP) and
//! intra-utterance frame-level (IUSP) similarity preserving losses.
//!
//! The crate covers the whole pipeline: log-mel features, similarity kernels,
//! losses with analytic gradients, a CNN-LSTM student family and a pooled CNN
//! teacher, a seeded synthetic corpus, micro AUPRC evaluation and the training
//! harness (setups, suites, hint-layer tuning).

pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod kernels;
pub mod losses;
pub mod models;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{FeatureMap, GramKind, LayerId, SimilarityMatrix};
