//! Independent loop-based oracles and random instance builders shared by the
//! integration tests.
#![allow(dead_code)]

use iusp::kernels::SquashParams;
use iusp::losses::{bce_loss_grad, iusp_loss, iusp_loss_grad, kd_logit_loss, kd_logit_loss_grad, sp_loss, sp_loss_grad};
use iusp::models::HintPair;
use iusp::{FeatureMap, LayerId};
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_map(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> FeatureMap {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureMap::from_shape_vec(shape, data, LayerId::new("x")).unwrap()
}

/// Random (b, c, h, w) with every side in 1..=4.
pub fn random_shape(rng: &mut ChaCha8Rng) -> [usize; 4] {
    [0; 4].map(|_| rng.gen_range(1..=4))
}

pub fn max_abs_diff(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---- naive kernels ----

pub fn naive_sp_gram(a: &Array4<f64>) -> Vec<Vec<f64>> {
    let (b, c, h, w) = a.dim();
    let mut g = vec![vec![0.0; b]; b];
    for i in 0..b {
        for j in 0..b {
            let mut s = 0.0;
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        s += a[[i, ci, y, x]] * a[[j, ci, y, x]];
                    }
                }
            }
            g[i][j] = s;
        }
    }
    for row in g.iter_mut() {
        let mut n = 0.0;
        for v in row.iter() {
            n += v * v;
        }
        let n = n.sqrt();
        for v in row.iter_mut() {
            *v = if n < 1e-12 { 0.0 } else { *v / n };
        }
    }
    g
}

pub fn naive_channel_normalize(a: &Array4<f64>) -> Array4<f64> {
    let (b, c, h, w) = a.dim();
    let mut out = a.clone();
    for i in 0..b {
        for ci in 0..c {
            let mut n = 0.0;
            for y in 0..h {
                for x in 0..w {
                    n += a[[i, ci, y, x]] * a[[i, ci, y, x]];
                }
            }
            let n = n.sqrt();
            for y in 0..h {
                for x in 0..w {
                    out[[i, ci, y, x]] = if n < 1e-12 { 0.0 } else { a[[i, ci, y, x]] / n };
                }
            }
        }
    }
    out
}

pub fn naive_frame_gram(a: &Array4<f64>, item: usize) -> Vec<Vec<f64>> {
    let (_, c, h, w) = a.dim();
    let mut g = vec![vec![0.0; w]; w];
    for s in 0..w {
        for t in 0..w {
            for ci in 0..c {
                for y in 0..h {
                    g[s][t] += a[[item, ci, y, s]] * a[[item, ci, y, t]];
                }
            }
        }
    }
    g
}

pub fn naive_squash(v: f64, gamma: f64, delta: f64) -> f64 {
    1.0 / (1.0 + (-gamma * (v - delta)).exp())
}

/// Corner-aligned bilinear resize: target pixel `i` samples source position
/// `i * (n - 1) / (m - 1)`.
pub fn naive_bilinear(a: &Array4<f64>, th: usize, tw: usize) -> Array4<f64> {
    let (b, c, h, w) = a.dim();
    let pos = |i: usize, n: usize, m: usize| {
        if m == 1 || n == 1 {
            0.0
        } else {
            i as f64 * (n - 1) as f64 / (m - 1) as f64
        }
    };
    let mut out = Array4::zeros((b, c, th, tw));
    for i in 0..b {
        for ci in 0..c {
            for y in 0..th {
                for x in 0..tw {
                    let (sy, sx) = (pos(y, h, th), pos(x, w, tw));
                    let mut v = 0.0;
                    // sum of the four neighbours weighted by the tent kernel
                    for yy in 0..h {
                        for xx in 0..w {
                            let wy = (1.0 - (sy - yy as f64).abs()).max(0.0);
                            let wx = (1.0 - (sx - xx as f64).abs()).max(0.0);
                            v += wy * wx * a[[i, ci, yy, xx]];
                        }
                    }
                    out[[i, ci, y, x]] = v;
                }
            }
        }
    }
    out
}

// ---- finite differences ----

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|)` in the L2 norm; 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub const FD_STEP: f64 = 1e-5;

fn map_like(shape: [usize; 4], data: &[f64]) -> FeatureMap {
    FeatureMap::from_shape_vec(shape, data.to_vec(), LayerId::new("s")).unwrap()
}

/// Relative gradient error of `bce_loss` w.r.t. the probabilities on instance `seed`.
pub fn bce_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (b, k) = (r.gen_range(1..=4), r.gen_range(1..=8));
    let p = Array2::from_shape_fn((b, k), |_| r.gen_range(0.05..0.95));
    let t = Array2::from_shape_fn((b, k), |_| if r.gen_bool(0.5) { 1.0 } else { 0.0 });
    let (_, g) = bce_loss_grad(&p, &t).unwrap();
    let x: Vec<f64> = p.iter().copied().collect();
    let num = numeric_grad(&x, FD_STEP, |v| {
        let pv = Array2::from_shape_vec((b, k), v.to_vec()).unwrap();
        iusp::losses::bce_loss(&pv, &t).unwrap()
    });
    relative_error(&g.iter().copied().collect::<Vec<_>>(), &num)
}

pub fn kd_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (b, k) = (r.gen_range(1..=4), r.gen_range(1..=8));
    let temp = r.gen_range(0.5..4.0);
    let s = Array2::from_shape_fn((b, k), |_| r.gen_range(-4.0..4.0));
    let t = Array2::from_shape_fn((b, k), |_| r.gen_range(-4.0..4.0));
    let (_, g) = kd_logit_loss_grad(&s, &t, temp).unwrap();
    let x: Vec<f64> = s.iter().copied().collect();
    let num = numeric_grad(&x, FD_STEP, |v| {
        let sv = Array2::from_shape_vec((b, k), v.to_vec()).unwrap();
        kd_logit_loss(&sv, &t, temp).unwrap()
    });
    relative_error(&g.iter().copied().collect::<Vec<_>>(), &num)
}

/// Two teacher and two student layers of random shapes sharing the batch,
/// compared through three pairs (student layer 0 is used twice).
pub fn sp_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let b = r.gen_range(2..=4);
    let layer = |r: &mut ChaCha8Rng| {
        let mut s = random_shape(r);
        s[0] = b;
        random_map(r, s)
    };
    let teachers = vec![layer(&mut r), layer(&mut r)];
    let students = vec![layer(&mut r), layer(&mut r)];
    let pairs = [HintPair::new(0, 0), HintPair::new(1, 0), HintPair::new(1, 1)];
    let (_, grads) = sp_loss_grad(&teachers, &students, &pairs).unwrap();
    let mut worst: f64 = 0.0;
    for (i, g) in grads.iter().enumerate() {
        let x: Vec<f64> = students[i].values().iter().copied().collect();
        let num = numeric_grad(&x, FD_STEP, |v| {
            let mut maps = students.clone();
            maps[i] = map_like(students[i].dims(), v);
            sp_loss(&teachers, &maps, &pairs).unwrap()
        });
        let g = g.as_ref().expect("every student layer is used");
        worst = worst.max(relative_error(&g.iter().copied().collect::<Vec<_>>(), &num));
    }
    worst
}

pub fn iusp_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut student_shape = random_shape(&mut r);
    // one frame normalizes to a constant gram, leaving nothing to differentiate
    student_shape[3] = r.gen_range(2..=4);
    let mut teacher_shape = random_shape(&mut r);
    teacher_shape[0] = student_shape[0];
    let teacher = random_map(&mut r, teacher_shape);
    let student = random_map(&mut r, student_shape);
    let p = SquashParams::default();
    let (_, g) = iusp_loss_grad(&teacher, &student, p).unwrap();
    let x: Vec<f64> = student.values().iter().copied().collect();
    let num = numeric_grad(&x, FD_STEP, |v| iusp_loss(&teacher, &map_like(student_shape, v), p).unwrap());
    relative_error(&g.iter().copied().collect::<Vec<_>>(), &num)
}

// ---- AUPRC reference ----

/// All-thresholds precision/recall sweep: predict positive when `score >= t`
/// for every distinct score plus +inf and -inf, keep the best precision per
/// recall and integrate with the trapezoidal rule.
pub fn brute_auprc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.push(f64::INFINITY);
    thresholds.push(f64::NEG_INFINITY);
    let mut points: Vec<(f64, f64)> = Vec::new();
    for &t in &thresholds {
        let (mut tp, mut fp) = (0usize, 0usize);
        for (s, l) in scores.iter().zip(labels) {
            if *s >= t {
                if *l {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        points.push((tp as f64 / positives as f64, precision));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    points.dedup_by(|later, earlier| later.0 == earlier.0);
    Some(points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum())
}

// ---- training fixtures ----

/// Features of a seeded synthetic corpus with `secs`-second clips.
pub fn feature_splits(n: [usize; 3], secs: f64, seed: u64) -> iusp::data::Splits<iusp::data::ClipFeatures> {
    use iusp::data::{extract_features, generate_clips, DatasetConfig, Splits};
    let cfg = DatasetConfig {
        clip_seconds: secs,
        ..DatasetConfig::new(n[0], n[1], n[2], seed)
    };
    let clips = generate_clips(&cfg).unwrap();
    let pipe = iusp::features::FeaturePipeline::new(secs).unwrap();
    Splits {
        train: extract_features(&clips.train, &pipe).unwrap(),
        val: extract_features(&clips.val, &pipe).unwrap(),
        test: extract_features(&clips.test, &pipe).unwrap(),
    }
}

/// An untrained narrow teacher: enough to supply logits and hints.
pub fn small_teacher(seed: u64) -> iusp::models::Teacher {
    use iusp::models::{build_teacher, TeacherConfig};
    let cfg = TeacherConfig {
        channels: vec![4, 8, 8, 8],
        kernel: 3,
        ..TeacherConfig::default()
    };
    build_teacher(&cfg, seed).unwrap()
}
