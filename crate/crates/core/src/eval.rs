//! Micro and class-wise AUPRC.
//!
//! A clip/class is predicted positive when its score is `>=` the threshold. The
//! sweep visits every distinct score plus the sentinels `-inf` (everything
//! positive) and `+inf` (nothing positive). Precision with no positive
//! predictions is taken as 1. Before trapezoidal integration, points are sorted by
//! recall and points sharing a recall keep their highest precision.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};

use crate::data::{ManifestRow, CLASS_NAMES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    scores: Array2<f64>,
    labels: Array2<bool>,
    clip_ids: Vec<String>,
}

impl PredictionSet {
    pub fn new(scores: Array2<f64>, labels: Array2<bool>, clip_ids: Vec<String>) -> Result<Self> {
        if scores.dim() != labels.dim() || clip_ids.len() != scores.nrows() {
            return Err(Error::InvalidInput(format!(
                "prediction shapes disagree: scores {:?}, labels {:?}, {} clip ids",
                scores.dim(),
                labels.dim(),
                clip_ids.len()
            )));
        }
        if scores.is_empty() {
            return Err(Error::InvalidInput("prediction set is empty".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("scores must be finite".into()));
        }
        Ok(PredictionSet {
            scores,
            labels,
            clip_ids,
        })
    }

    /// Pairs predictions with manifest labels by clip id.
    pub fn join(clip_ids: Vec<String>, scores: Array2<f64>, rows: &[ManifestRow]) -> Result<Self> {
        let by_id: HashMap<&str, &ManifestRow> = rows.iter().map(|r| (r.clip_id.as_str(), r)).collect();
        let mut labels = Array2::from_elem(scores.dim(), false);
        for (i, id) in clip_ids.iter().enumerate() {
            let row = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("no labels for clip {id}")))?;
            for (dst, &l) in labels.row_mut(i).iter_mut().zip(&row.labels) {
                *dst = l;
            }
        }
        PredictionSet::new(scores, labels, clip_ids)
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    pub fn labels(&self) -> &Array2<bool> {
        &self.labels
    }

    pub fn clip_ids(&self) -> &[String] {
        &self.clip_ids
    }

    pub fn num_classes(&self) -> usize {
        self.scores.ncols()
    }

    /// The single-class view of column `k`.
    pub fn class(&self, k: usize) -> Result<PredictionSet> {
        if k >= self.num_classes() {
            return Err(Error::Index {
                index: k,
                len: self.num_classes(),
            });
        }
        PredictionSet::new(
            self.scores.column(k).to_owned().insert_axis(Axis(1)),
            self.labels.column(k).to_owned().insert_axis(Axis(1)),
            self.clip_ids.clone(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// Ordered by rising threshold, so recall is non-increasing.
    pub points: Vec<PrPoint>,
    pub auprc: f64,
}

fn curve_from(scores: ArrayView1<'_, f64>, labels: ArrayView1<'_, bool>) -> Result<PrCurve> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::UndefinedRecall);
    }
    let mut order: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));

    // sweep thresholds from high to low
    let point = |threshold, tp: usize, fp: usize| PrPoint {
        threshold,
        precision: if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 },
        recall: tp as f64 / positives as f64,
        true_positives: tp,
    };
    let mut desc = vec![point(f64::INFINITY, 0, 0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = order[i].0;
        while i < order.len() && order[i].0 == s {
            if order[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        desc.push(point(s, tp, fp));
    }
    desc.push(point(f64::NEG_INFINITY, tp, fp));

    // best precision per distinct recall, ascending in recall
    let mut best: Vec<(usize, f64)> = Vec::new();
    for p in desc.iter() {
        match best.last_mut() {
            Some((t, prec)) if *t == p.true_positives => *prec = prec.max(p.precision),
            _ => best.push((p.true_positives, p.precision)),
        }
    }
    // sum in integer recall steps so a perfect curve integrates to exactly 1
    let twice: f64 = best
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) as f64 * (w[0].1 + w[1].1))
        .sum();
    let auprc = (twice / (2 * positives) as f64).clamp(0.0, 1.0);
    desc.reverse();
    Ok(PrCurve {
        points: desc,
        auprc,
    })
}

/// Global tally over every (clip, class) cell.
pub fn micro_pr_curve(p: &PredictionSet) -> Result<PrCurve> {
    let scores = p.scores.iter().copied().collect::<ndarray::Array1<f64>>();
    let labels = p.labels.iter().copied().collect::<ndarray::Array1<bool>>();
    curve_from(scores.view(), labels.view())
}

/// Per-class AUPRC; `None` for classes without positives.
pub fn classwise_auprc(p: &PredictionSet) -> Vec<Option<f64>> {
    (0..p.num_classes())
        .map(|k| curve_from(p.scores.column(k), p.labels.column(k)).ok().map(|c| c.auprc))
        .collect()
}

/// Mean over the defined entries, `None` if none are defined.
pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn score_header() -> Vec<&'static str> {
    std::iter::once("clip_id").chain(CLASS_NAMES).collect()
}

pub fn write_predictions(path: &Path, clip_ids: &[String], scores: &Array2<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file);
    let io = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(score_header()).map_err(io)?;
    for (id, row) in clip_ids.iter().zip(scores.outer_iter()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| format!("{v:.17e}")));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `clip_id` + one score column per class.
pub fn read_predictions(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let parse = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let header = r.headers().map_err(|e| parse(1, e.to_string()))?.clone();
    if header.iter().map(str::trim).ne(score_header()) {
        return Err(parse(1, format!("expected header `{}`", score_header().join(","))));
    }
    let k = CLASS_NAMES.len();
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| parse(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        ids.push(rec[0].trim().to_string());
        for c in 0..k {
            let v: f64 = rec[c + 1]
                .trim()
                .parse()
                .map_err(|_| parse(line, format!("score `{}` is not a number", &rec[c + 1])))?;
            values.push(v);
        }
    }
    let n = ids.len();
    let scores = Array2::from_shape_vec((n, k), values).expect("row lengths checked");
    Ok((ids, scores))
}
