use std::fs::File;
use std::path::Path;

use super::run::RunResult;
use super::setup::Setup;
use super::suite::CellSummary;
use crate::data::CLASS_NAMES;
use crate::error::{Error, Result};

const RESULT_COLUMNS: [&str; 7] = [
    "setup",
    "lstm_hidden",
    "seed",
    "best_epoch",
    "stopped_epoch",
    "best_val_micro_auprc",
    "test_micro_auprc",
];

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Format(format!("{}: {e}", path.display()))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// One row per run; class-wise AUPRC columns are empty when undefined.
pub fn write_results(path: &Path, results: &[RunResult]) -> Result<()> {
    let mut w = writer(path)?;
    let header: Vec<String> = RESULT_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(CLASS_NAMES.iter().map(|c| format!("auprc_{c}")))
        .collect();
    w.write_record(&header).map_err(csv_err(path))?;
    for r in results {
        let mut rec = vec![
            r.setup.name().to_string(),
            r.lstm_hidden.to_string(),
            r.seed.to_string(),
            r.best_epoch.to_string(),
            r.stopped_epoch.to_string(),
            r.best_val_micro_auprc.to_string(),
            r.test_micro_auprc.to_string(),
        ];
        rec.extend(r.classwise.iter().map(|v| opt(*v)));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// The columns of a results CSV needed for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub setup: Setup,
    pub lstm_hidden: usize,
    pub seed: u64,
    pub test_micro_auprc: f64,
    pub classwise: Vec<Option<f64>>,
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let parse = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| parse(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != RESULT_COLUMNS.len() + CLASS_NAMES.len() {
            return Err(parse(line, format!("expected {} columns", RESULT_COLUMNS.len() + CLASS_NAMES.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| parse(line, format!("`{}` is not a number", &rec[i])))
        };
        let classwise = (0..CLASS_NAMES.len())
            .map(|k| {
                let cell = &rec[RESULT_COLUMNS.len() + k];
                if cell.is_empty() {
                    Ok(None)
                } else {
                    num(RESULT_COLUMNS.len() + k).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(ResultRow {
            setup: rec[0].parse()?,
            lstm_hidden: num(1)? as usize,
            seed: num(2)? as u64,
            test_micro_auprc: num(6)?,
            classwise,
        });
    }
    Ok(rows)
}

/// Mean, standard error and improvement over the BCE baseline per (setup, size).
pub fn write_summary(path: &Path, cells: &[CellSummary]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "setup",
        "lstm_hidden",
        "runs",
        "failures",
        "mean_test_micro_auprc",
        "stderr",
        "improvement_over_bce_pct",
    ])
    .map_err(csv_err(path))?;
    for c in cells {
        w.write_record([
            c.setup.name().to_string(),
            c.lstm_hidden.to_string(),
            c.runs.to_string(),
            c.failures.to_string(),
            opt(c.mean),
            opt(c.stderr),
            opt(c.improvement_pct),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_failures(path: &Path, failures: &[(Setup, usize, u64, String)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["setup", "lstm_hidden", "seed", "error"])
        .map_err(csv_err(path))?;
    for (s, h, seed, msg) in failures {
        w.write_record([s.name().to_string(), h.to_string(), seed.to_string(), msg.clone()])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
