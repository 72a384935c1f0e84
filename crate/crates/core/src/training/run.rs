use std::borrow::Cow;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array4, ArrayView3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamParams};
use super::setup::{Setup, TrainConfig};
use crate::data::{ClipFeatures, Splits};
use crate::error::{Error, Result};
use crate::eval::{classwise_auprc, micro_pr_curve, write_predictions, PredictionSet};
use crate::kernels::{row_normalized_gram, SquashParams};
use crate::losses::{
    bce_loss_grad, iusp_loss_against, iusp_teacher_targets, kd_logit_loss_grad, sp_loss_against, step_log_line,
    total_loss, LossComponents, LossValue,
};
use crate::models::{build_student, HintPair, InputNorm, Network, Student, StudentConfig, Teacher};
use crate::tensor::{FeatureMap, SimilarityMatrix};

/// Precomputed teacher signals are kept in memory below this size.
pub const TEACHER_CACHE_BUDGET: usize = 1 << 30;

/// Which of a clip's two feature arrays a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSide {
    Teacher,
    Student,
}

impl InputSide {
    pub fn of(self, f: &ClipFeatures) -> &Array2<f64> {
        match self {
            InputSide::Teacher => &f.teacher,
            InputSide::Student => &f.student,
        }
    }
}

/// What the frozen teacher contributes for one clip.
#[derive(Debug, Clone)]
pub struct TeacherSignals {
    pub logits: Array1<f64>,
    /// Flattened hint for the batch gram.
    pub sp_hint: Option<Array1<f64>>,
    /// Squashed, resized frame gram.
    pub iusp_target: Option<SimilarityMatrix>,
}

#[derive(Debug, Clone, Copy)]
struct SignalPlan {
    sp_layer: Option<usize>,
    /// Teacher layer and the student hint's (h, w).
    iusp: Option<(usize, usize, usize)>,
    squash: SquashParams,
}

/// Teacher outputs for the training clips, precomputed when they fit in
/// [`TEACHER_CACHE_BUDGET`] and recomputed per batch otherwise.
pub struct TeacherCache<'a, T: Network> {
    teacher: &'a T,
    plan: SignalPlan,
    items: Option<Vec<TeacherSignals>>,
}

impl<'a, T: Network> TeacherCache<'a, T> {
    fn build(teacher: &'a T, plan: SignalPlan, clips: &[ClipFeatures]) -> Result<Self> {
        let frames = clips.first().map_or(0, |c| c.teacher.ncols());
        let dims = teacher.hint_dims(frames);
        let mut per_clip = teacher.num_classes();
        if let Some(l) = plan.sp_layer {
            per_clip += dims[l].iter().product::<usize>();
        }
        if let Some((_, _, w)) = plan.iusp {
            per_clip += w * w;
        }
        let mut cache = TeacherCache {
            teacher,
            plan,
            items: None,
        };
        if per_clip * 8 * clips.len() <= TEACHER_CACHE_BUDGET {
            cache.items = Some(clips.par_iter().map(|c| cache.compute(c)).collect::<Result<_>>()?);
        }
        Ok(cache)
    }

    fn compute(&self, clip: &ClipFeatures) -> Result<TeacherSignals> {
        let out = self.teacher.forward(clip.teacher.view())?;
        let sp_hint = self
            .plan
            .sp_layer
            .map(|l| out.hints[l].values().iter().copied().collect::<Array1<f64>>());
        let iusp_target = match self.plan.iusp {
            Some((l, h, w)) => iusp_teacher_targets(&out.hints[l], h, w, self.plan.squash)?.pop(),
            None => None,
        };
        Ok(TeacherSignals {
            logits: out.logits,
            sp_hint,
            iusp_target,
        })
    }

    fn get(&self, index: usize, clips: &[ClipFeatures]) -> Result<Cow<'_, TeacherSignals>> {
        match &self.items {
            Some(items) => Ok(Cow::Borrowed(&items[index])),
            None => self.compute(&clips[index]).map(Cow::Owned),
        }
    }

    pub fn is_precomputed(&self) -> bool {
        self.items.is_some()
    }
}

/// Loss means over one epoch's steps plus the validation metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub bce: f64,
    pub kd: f64,
    pub sp: f64,
    pub iusp: f64,
    pub total: f64,
    pub val_micro_auprc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub setup: Setup,
    pub lstm_hidden: usize,
    pub seed: u64,
    pub best_val_micro_auprc: f64,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub test_micro_auprc: f64,
    pub classwise: Vec<Option<f64>>,
    pub loss_history: Vec<EpochRecord>,
}

/// Sigmoid outputs for every clip, one row each.
pub fn predict<N: Network>(model: &N, clips: &[ClipFeatures], side: InputSide) -> Result<Array2<f64>> {
    let rows = clips
        .par_iter()
        .map(|c| model.forward(side.of(c).view()).map(|f| f.probs))
        .collect::<Result<Vec<_>>>()?;
    let k = model.num_classes();
    let mut out = Array2::zeros((rows.len(), k));
    for (mut dst, r) in out.outer_iter_mut().zip(rows) {
        dst.assign(&r);
    }
    Ok(out)
}

pub fn prediction_set(scores: Array2<f64>, clips: &[ClipFeatures]) -> Result<PredictionSet> {
    let labels = Array2::from_shape_fn(scores.dim(), |(i, k)| clips[i].labels[k]);
    PredictionSet::new(scores, labels, clips.iter().map(|c| c.clip_id.clone()).collect())
}

fn micro_auprc<N: Network>(model: &N, clips: &[ClipFeatures], side: InputSide) -> Result<f64> {
    Ok(micro_pr_curve(&prediction_set(predict(model, clips, side)?, clips)?)?.auprc)
}

fn check_pair(pair: HintPair, teacher_hints: usize, student_hints: usize) -> Result<()> {
    if pair.teacher >= teacher_hints || pair.student >= student_hints {
        return Err(Error::Config(format!(
            "hint pair {pair} outside the {teacher_hints}x{student_hints} grid"
        )));
    }
    Ok(())
}

/// Files written for a run when an output directory is given.
struct RunFiles {
    steps: BufWriter<File>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn one_step<N: Network, T: Network>(
    model: &N,
    grads: &mut N,
    batch: &[usize],
    clips: &[ClipFeatures],
    side: InputSide,
    cfg: &TrainConfig,
    teacher: Option<&TeacherCache<'_, T>>,
) -> Result<LossValue> {
    let w = cfg.effective_weights();
    let b = batch.len();
    let k = model.num_classes();
    let mut fwd = Vec::with_capacity(b);
    for &i in batch {
        fwd.push(model.forward_train(side.of(&clips[i]).view())?);
    }
    let mut probs = Array2::zeros((b, k));
    let mut logits = Array2::zeros((b, k));
    let mut targets = Array2::zeros((b, k));
    for (r, (&i, (f, _))) in batch.iter().zip(&fwd).enumerate() {
        probs.row_mut(r).assign(&f.probs);
        logits.row_mut(r).assign(&f.logits);
        targets.row_mut(r).assign(&clips[i].label_array());
    }
    let mut comps = LossComponents::default();
    let (bce, d_probs) = bce_loss_grad(&probs, &targets)?;
    comps.bce = bce;
    let mut d_logits = d_probs * &probs.mapv(|p| p * (1.0 - p)) * w.alpha_bce;
    let n_hints = fwd[0].0.hints.len();
    let mut d_hints: Vec<Option<Array4<f64>>> = vec![None; n_hints];

    if let Some(tc) = teacher {
        let signals = batch
            .iter()
            .map(|&i| tc.get(i, clips))
            .collect::<Result<Vec<_>>>()?;
        if w.alpha_kd > 0.0 {
            let mut t_logits = Array2::zeros((b, k));
            for (mut row, s) in t_logits.outer_iter_mut().zip(&signals) {
                row.assign(&s.logits);
            }
            let (kd, g) = kd_logit_loss_grad(&logits, &t_logits, w.kd_temperature)?;
            comps.kd = kd;
            d_logits.scaled_add(w.alpha_kd, &g);
        }
        if let (true, Some(pair)) = (w.alpha_sp > 0.0, cfg.hint_pair_sp) {
            let len = signals[0].sp_hint.as_ref().map_or(0, |h| h.len());
            let mut q = Array2::zeros((b, len));
            for (mut row, s) in q.outer_iter_mut().zip(&signals) {
                row.assign(s.sp_hint.as_ref().expect("sp hint planned"));
            }
            let t_gram = row_normalized_gram(q.dot(&q.t()));
            let student = stack_hints(&fwd, pair.student)?;
            let (sp, g) = sp_loss_against(&t_gram, &student)?;
            comps.sp = sp;
            accumulate(&mut d_hints[pair.student], g, w.alpha_sp);
        }
        if let (true, Some(pair)) = (w.alpha_iusp > 0.0, cfg.hint_pair_iusp) {
            let targets: Vec<SimilarityMatrix> = signals
                .iter()
                .map(|s| s.iusp_target.clone().expect("iusp target planned"))
                .collect();
            let student = stack_hints(&fwd, pair.student)?;
            let (iusp, g) = iusp_loss_against(&targets, &student, w.squash)?;
            comps.iusp = iusp;
            accumulate(&mut d_hints[pair.student], g, w.alpha_iusp);
        }
    }

    let value = total_loss(comps, &w);
    if !comps.is_finite() || !value.total.is_finite() {
        return Err(Error::Divergence {
            step: 0,
            bce: comps.bce,
            kd: comps.kd,
            sp: comps.sp,
            iusp: comps.iusp,
        });
    }
    // accumulate item gradients in batch order
    for (r, (_, cache)) in fwd.iter().enumerate() {
        let hint_views: Vec<Option<ArrayView3<'_, f64>>> = d_hints
            .iter()
            .map(|g| g.as_ref().map(|a| a.index_axis(Axis(0), r)))
            .collect();
        model.backward(cache, d_logits.row(r), &hint_views, grads);
    }
    Ok(value)
}

fn accumulate(slot: &mut Option<Array4<f64>>, g: Array4<f64>, alpha: f64) {
    match slot {
        Some(acc) => acc.scaled_add(alpha, &g),
        None => *slot = Some(g * alpha),
    }
}

fn stack_hints<C>(fwd: &[(crate::models::Forward, C)], layer: usize) -> Result<FeatureMap> {
    let maps: Vec<&FeatureMap> = fwd.iter().map(|(f, _)| &f.hints[layer]).collect();
    FeatureMap::stack(&maps)
}

fn zero_grads<N: Network>(g: &mut N) {
    for s in g.params_mut() {
        s.fill(0.0);
    }
}

fn write_epochs(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut f = create(path)?;
    let mut text = String::from("epoch,steps,bce,kd,sp,iusp,total,val_micro_auprc\n");
    for e in history {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.epoch, e.steps, e.bce, e.kd, e.sp, e.iusp, e.total, e.val_micro_auprc
        ));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Trains `model` on `data.train`, early-stopping on validation micro AUPRC.
///
/// Epoch 0 scores the initial weights. The weights of the best epoch are
/// restored and returned together with the test metrics. When `out_dir` is
/// given it receives `steps.tsv`, `epochs.csv`, `result.csv`,
/// `test_predictions.csv` and `best.ckpt`.
pub fn train_network<N: Network, T: Network>(
    mut model: N,
    side: InputSide,
    cfg: &TrainConfig,
    data: &Splits<ClipFeatures>,
    teacher: Option<&T>,
    out_dir: Option<&Path>,
) -> Result<(RunResult, N)> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() || data.test.is_empty() {
        return Err(Error::InvalidInput("train, val and test splits must be non-empty".into()));
    }
    let weights = cfg.effective_weights();
    let teacher = if cfg.setup.needs_teacher() {
        Some(teacher.ok_or_else(|| Error::Config(format!("setup {} needs a teacher", cfg.setup)))?)
    } else {
        None
    };

    model.set_input_norm(InputNorm::fit(data.train.iter().map(|c| side.of(c)))?)?;
    let frames = side.of(&data.train[0]).ncols();
    let cache = match teacher {
        Some(t) => {
            let (nt, ns) = (t.hint_layers().len(), model.hint_layers().len());
            let mut plan = SignalPlan {
                sp_layer: None,
                iusp: None,
                squash: weights.squash,
            };
            if let (true, Some(p)) = (weights.alpha_sp > 0.0, cfg.hint_pair_sp) {
                check_pair(p, nt, ns)?;
                plan.sp_layer = Some(p.teacher);
            }
            if let (true, Some(p)) = (weights.alpha_iusp > 0.0, cfg.hint_pair_iusp) {
                check_pair(p, nt, ns)?;
                let [_, h, w] = model.hint_dims(frames)[p.student];
                plan.iusp = Some((p.teacher, h, w));
            }
            Some(TeacherCache::build(t, plan, &data.train)?)
        }
        None => None,
    };

    let mut files = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(RunFiles {
                steps: create(&dir.join("steps.tsv"))?,
            })
        }
        None => None,
    };

    let mut opt = Adam::new(&model, AdamParams::with_lr(cfg.lr));
    let mut grads = model.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5348_5546_464c_4521);
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    let initial = micro_auprc(&model, &data.val, side)?;
    let mut history = vec![EpochRecord {
        epoch: 0,
        steps: 0,
        bce: f64::NAN,
        kd: f64::NAN,
        sp: f64::NAN,
        iusp: f64::NAN,
        total: f64::NAN,
        val_micro_auprc: initial,
    }];
    let (mut best, mut best_epoch, mut best_model) = (initial, 0usize, model.clone());
    let mut step = 0usize;
    let mut stopped = 0usize;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 5];
        let mut steps = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            zero_grads(&mut grads);
            let out = one_step(&model, &mut grads, batch, &data.train, side, cfg, cache.as_ref())
                .map_err(|e| match e {
                    Error::Divergence { bce, kd, sp, iusp, .. } => Error::Divergence { step, bce, kd, sp, iusp },
                    other => other,
                })?;
            opt.step(&mut model, &grads);
            let c = out.components;
            for (s, v) in sums.iter_mut().zip([c.bce, c.kd, c.sp, c.iusp, out.total]) {
                *s += v;
            }
            steps += 1;
            if let Some(f) = files.as_mut() {
                writeln!(f.steps, "{}", step_log_line(step, &out))
                    .map_err(|e| Error::io("steps.tsv", e))?;
            }
        }
        let val = micro_auprc(&model, &data.val, side)?;
        let n = steps as f64;
        history.push(EpochRecord {
            epoch,
            steps,
            bce: sums[0] / n,
            kd: sums[1] / n,
            sp: sums[2] / n,
            iusp: sums[3] / n,
            total: sums[4] / n,
            val_micro_auprc: val,
        });
        stopped = epoch;
        if val > best {
            best = val;
            best_epoch = epoch;
            best_model = model.clone();
        }
        if epoch - best_epoch > cfg.patience {
            break;
        }
    }

    let model = best_model;
    let test_scores = predict(&model, &data.test, side)?;
    let test_set = prediction_set(test_scores.clone(), &data.test)?;
    let result = RunResult {
        setup: cfg.setup,
        lstm_hidden: cfg.lstm_hidden,
        seed: cfg.seed,
        best_val_micro_auprc: best,
        best_epoch,
        stopped_epoch: stopped,
        test_micro_auprc: micro_pr_curve(&test_set)?.auprc,
        classwise: classwise_auprc(&test_set),
        loss_history: history,
    };

    if let (Some(dir), Some(mut f)) = (out_dir, files) {
        f.steps.flush().map_err(|e| Error::io(dir.join("steps.tsv"), e))?;
        write_epochs(&dir.join("epochs.csv"), &result.loss_history)?;
        super::io::write_results(&dir.join("result.csv"), std::slice::from_ref(&result))?;
        write_predictions(&dir.join("test_predictions.csv"), test_set.clip_ids(), &test_scores)?;
        fs::write(dir.join("config.toml"), super::config::RunConfig::from_train(cfg).to_toml()?)
            .map_err(|e| Error::io(dir.join("config.toml"), e))?;
        model.save_checkpoint(
            &dir.join("best.ckpt"),
            &[
                ("setup".into(), cfg.setup.name().into()),
                ("seed".into(), cfg.seed.to_string()),
                ("best_epoch".into(), best_epoch.to_string()),
            ],
        )?;
    }
    Ok((result, model))
}

/// Builds a student from `cfg.lstm_hidden` and `cfg.seed`, then trains it.
pub fn train_student(
    cfg: &TrainConfig,
    data: &Splits<ClipFeatures>,
    teacher: Option<&Teacher>,
    out_dir: Option<&Path>,
) -> Result<(RunResult, Student)> {
    let student = build_student(&StudentConfig::with_hidden(cfg.lstm_hidden), cfg.seed)?;
    train_network(student, InputSide::Student, cfg, data, teacher, out_dir)
}

/// Alias matching the single-run entry point: a student run for `cfg`.
pub fn train_once(
    cfg: &TrainConfig,
    data: &Splits<ClipFeatures>,
    teacher: Option<&Teacher>,
) -> Result<RunResult> {
    train_student(cfg, data, teacher, None).map(|(r, _)| r)
}

/// Supervised (BCE) training of a teacher on its 64-bin inputs.
pub fn train_teacher(
    teacher: Teacher,
    cfg: &TrainConfig,
    data: &Splits<ClipFeatures>,
    out_dir: Option<&Path>,
) -> Result<(RunResult, Teacher)> {
    if cfg.setup != Setup::Bce {
        return Err(Error::Config("teachers are trained with the BCE setup".into()));
    }
    train_network(teacher, InputSide::Teacher, cfg, data, None::<&Teacher>, out_dir)
}
