//! Training protocol: the five loss setups, early stopping on validation
//! micro AUPRC, multi-seed suites and hint-layer grid tuning.
//!
//! Gradients within a batch are accumulated item by item in batch order, so a
//! run is bit-reproducible from its config and seed.

mod adam;
mod config;
mod io;
mod run;
mod setup;
mod suite;

pub use adam::{Adam, AdamParams};
pub use config::{format_hint_pair, parse_hint_pair, RunConfig};
pub use io::{read_results, write_failures, write_results, write_summary, ResultRow};
pub use run::{
    predict, prediction_set, train_network, train_once, train_student, train_teacher, EpochRecord, InputSide,
    RunResult, TeacherCache, TeacherSignals, TEACHER_CACHE_BUDGET,
};
pub use setup::{Setup, TrainConfig};
pub use suite::{
    mean_and_stderr, run_setup_suite, select_best, summarize, tune_hint_layers, CandidateScore, CellSummary,
    HintTuning, SimilarityLoss, SuiteReport, SuiteRun,
};
