//! Setup x seed x LSTM-size suites and hint-layer tuning.
//!
//! Runs are independent and may execute on a rayon pool of `jobs` threads;
//! results are always reported in cross-product order (setup, size, seed).

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::io::{write_failures, write_results, write_summary};
use super::run::{train_student, RunResult};
use super::setup::{Setup, TrainConfig};
use crate::data::{ClipFeatures, Splits};
use crate::error::{Error, Result};
use crate::models::{build_student, HintGrid, HintPair, StudentConfig, Teacher};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRun {
    pub setup: Setup,
    pub lstm_hidden: usize,
    pub seed: u64,
    /// Error message for a failed run.
    pub outcome: std::result::Result<RunResult, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub setup: Setup,
    pub lstm_hidden: usize,
    pub runs: usize,
    pub failures: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation over sqrt(n); 0 for a single run.
    pub stderr: Option<f64>,
    /// Relative gain of `mean` over the BCE cell of the same size, in percent.
    pub improvement_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub runs: Vec<SuiteRun>,
    pub cells: Vec<CellSummary>,
}

impl SuiteReport {
    pub fn results(&self) -> Vec<RunResult> {
        self.runs
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok().cloned())
            .collect()
    }

    pub fn cell(&self, setup: Setup, lstm_hidden: usize) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.setup == setup && c.lstm_hidden == lstm_hidden)
    }
}

pub fn mean_and_stderr(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, (var / n).sqrt()))
}

pub fn summarize(runs: &[SuiteRun]) -> Vec<CellSummary> {
    let mut keys: Vec<(Setup, usize)> = Vec::new();
    for r in runs {
        if !keys.contains(&(r.setup, r.lstm_hidden)) {
            keys.push((r.setup, r.lstm_hidden));
        }
    }
    let mut cells: Vec<CellSummary> = keys
        .iter()
        .map(|&(setup, h)| {
            let cell: Vec<&SuiteRun> = runs
                .iter()
                .filter(|r| r.setup == setup && r.lstm_hidden == h)
                .collect();
            let ok: Vec<f64> = cell
                .iter()
                .filter_map(|r| r.outcome.as_ref().ok().map(|x| x.test_micro_auprc))
                .collect();
            let ms = mean_and_stderr(&ok);
            CellSummary {
                setup,
                lstm_hidden: h,
                runs: cell.len(),
                failures: cell.len() - ok.len(),
                mean: ms.map(|m| m.0),
                stderr: ms.map(|m| m.1),
                improvement_pct: None,
            }
        })
        .collect();
    let baselines: Vec<(usize, Option<f64>)> = cells
        .iter()
        .filter(|c| c.setup == Setup::Bce)
        .map(|c| (c.lstm_hidden, c.mean))
        .collect();
    for c in cells.iter_mut() {
        let base = baselines.iter().find(|b| b.0 == c.lstm_hidden).and_then(|b| b.1);
        c.improvement_pct = match (c.mean, base) {
            (Some(m), Some(b)) if b > 0.0 => Some((m - b) / b * 100.0),
            _ => None,
        };
    }
    cells
}

fn run_dir(root: &Path, setup: Setup, h: usize, seed: u64) -> PathBuf {
    root.join(setup.name().replace('+', "_"))
        .join(format!("h{h}"))
        .join(format!("seed{seed}"))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs every (config, size, seed) combination, where each entry of `configs`
/// describes one setup (its weights and hint pairs) and the sizes and seeds
/// override `lstm_hidden` and `seed`. A failed run is recorded and the suite
/// continues. With `out_dir`, each run gets its own directory and the suite
/// writes `results.csv`, `summary.csv` and `failures.csv`.
#[allow(clippy::too_many_arguments)]
pub fn run_setup_suite(
    configs: &[TrainConfig],
    seeds: &[u64],
    lstm_sizes: &[usize],
    data: &Splits<ClipFeatures>,
    teacher: Option<&Teacher>,
    jobs: usize,
    out_dir: Option<&Path>,
) -> Result<SuiteReport> {
    if configs.is_empty() || seeds.is_empty() || lstm_sizes.is_empty() {
        return Err(Error::Config("suite needs at least one setup, seed and LSTM size".into()));
    }
    let plan: Vec<TrainConfig> = configs
        .iter()
        .flat_map(|base| {
            lstm_sizes.iter().flat_map(move |&h| {
                seeds.iter().map(move |&seed| TrainConfig {
                    lstm_hidden: h,
                    seed,
                    ..base.clone()
                })
            })
        })
        .collect();
    let runs: Vec<SuiteRun> = pool(jobs)?.install(|| {
        plan.par_iter()
            .map(|cfg| {
                let dir = out_dir.map(|d| run_dir(d, cfg.setup, cfg.lstm_hidden, cfg.seed));
                let outcome = train_student(cfg, data, teacher, dir.as_deref())
                    .map(|(r, _)| r)
                    .map_err(|e| e.to_string());
                SuiteRun {
                    setup: cfg.setup,
                    lstm_hidden: cfg.lstm_hidden,
                    seed: cfg.seed,
                    outcome,
                }
            })
            .collect()
    });
    let report = SuiteReport {
        cells: summarize(&runs),
        runs,
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_results(&dir.join("results.csv"), &report.results())?;
        write_summary(&dir.join("summary.csv"), &report.cells)?;
        let failures: Vec<_> = report
            .runs
            .iter()
            .filter_map(|r| {
                r.outcome
                    .as_ref()
                    .err()
                    .map(|e| (r.setup, r.lstm_hidden, r.seed, e.clone()))
            })
            .collect();
        write_failures(&dir.join("failures.csv"), &failures)?;
    }
    Ok(report)
}

/// Which similarity loss a tuning sweep is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityLoss {
    Sp,
    Iusp,
}

impl SimilarityLoss {
    pub fn name(self) -> &'static str {
        match self {
            SimilarityLoss::Sp => "sp",
            SimilarityLoss::Iusp => "iusp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub pair: HintPair,
    /// Mean validation micro AUPRC per LSTM size, in the order given.
    pub per_size: Vec<Option<f64>>,
    /// Mean of `per_size` over the sizes with at least one successful run.
    pub average: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HintTuning {
    pub loss: SimilarityLoss,
    pub scores: Vec<CandidateScore>,
    pub best: HintPair,
}

/// Highest average wins; exact ties go to the lexicographically smallest pair.
pub fn select_best(scores: &[(HintPair, f64)]) -> Option<HintPair> {
    let mut sorted: Vec<&(HintPair, f64)> = scores.iter().filter(|(_, s)| s.is_finite()).collect();
    sorted.sort_by_key(|(p, _)| *p);
    let mut best: Option<(HintPair, f64)> = None;
    for &&(p, s) in &sorted {
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((p, s));
        }
    }
    best.map(|(p, _)| p)
}

/// Grid search over every (teacher pool, student layer) pair for each similarity
/// loss of `base.setup`, with `trials` seeds (`base.seed ..`) per LSTM size,
/// scored by best validation micro AUPRC averaged over the sizes.
pub fn tune_hint_layers(
    base: &TrainConfig,
    lstm_sizes: &[usize],
    trials: usize,
    data: &Splits<ClipFeatures>,
    teacher: &Teacher,
    jobs: usize,
) -> Result<Vec<HintTuning>> {
    if lstm_sizes.is_empty() || trials == 0 {
        return Err(Error::Config("tuning needs at least one LSTM size and one trial".into()));
    }
    let probe = build_student(&StudentConfig::with_hidden(lstm_sizes[0]), 0)?;
    let grid = HintGrid::new(teacher, &probe).candidates();
    let mut losses = Vec::new();
    if base.setup.uses_sp() {
        losses.push(SimilarityLoss::Sp);
    }
    if base.setup.uses_iusp() {
        losses.push(SimilarityLoss::Iusp);
    }
    if losses.is_empty() {
        return Err(Error::Config(format!("setup {} has no similarity loss to tune", base.setup)));
    }
    let seeds: Vec<u64> = (0..trials as u64).map(|i| base.seed + i).collect();
    let pool = pool(jobs)?;
    let mut out = Vec::new();
    let seeds = &seeds;
    for loss in losses {
        let plan: Vec<(usize, usize, TrainConfig)> = grid
            .iter()
            .enumerate()
            .flat_map(|(ci, &pair)| {
                lstm_sizes.iter().enumerate().flat_map(move |(si, &h)| {
                    seeds.iter().map(move |&seed| {
                        let mut cfg = base.clone();
                        match loss {
                            SimilarityLoss::Sp => cfg.hint_pair_sp = Some(pair),
                            SimilarityLoss::Iusp => cfg.hint_pair_iusp = Some(pair),
                        }
                        cfg.lstm_hidden = h;
                        cfg.seed = seed;
                        (ci, si, cfg)
                    })
                })
            })
            .collect();
        let vals: Vec<(usize, usize, Option<f64>)> = pool.install(|| {
            plan.par_iter()
                .map(|(ci, si, cfg)| {
                    let v = train_student(cfg, data, Some(teacher), None)
                        .ok()
                        .map(|(r, _)| r.best_val_micro_auprc);
                    (*ci, *si, v)
                })
                .collect()
        });
        let scores: Vec<CandidateScore> = grid
            .iter()
            .enumerate()
            .map(|(ci, &pair)| {
                let per_size: Vec<Option<f64>> = (0..lstm_sizes.len())
                    .map(|si| {
                        let v: Vec<f64> = vals
                            .iter()
                            .filter(|(c, s, _)| *c == ci && *s == si)
                            .filter_map(|(_, _, v)| *v)
                            .collect();
                        mean_and_stderr(&v).map(|m| m.0)
                    })
                    .collect();
                let defined: Vec<f64> = per_size.iter().flatten().copied().collect();
                CandidateScore {
                    pair,
                    average: mean_and_stderr(&defined).map(|m| m.0),
                    per_size,
                }
            })
            .collect();
        let flat: Vec<(HintPair, f64)> = scores
            .iter()
            .filter_map(|c| c.average.map(|a| (c.pair, a)))
            .collect();
        let best = select_best(&flat)
            .ok_or_else(|| Error::InvalidInput(format!("every {} tuning run failed", loss.name())))?;
        out.push(HintTuning { loss, scores, best });
    }
    Ok(out)
}
