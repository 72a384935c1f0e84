use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use iusp::data::{
    extract_features, generate_dataset, read_manifest_rows, save_features, DatasetConfig, Split, CLASS_NAMES,
};
use iusp::eval::{classwise_auprc, micro_pr_curve, read_predictions, PredictionSet};
use iusp::features::FeaturePipeline;
use iusp::models::{build_teacher, TeacherConfig, STUDENT_HIDDEN_SIZES};
use iusp::training::{
    format_hint_pair, parse_hint_pair, run_setup_suite, train_student, train_teacher, tune_hint_layers, RunConfig,
    RunResult, Setup, TrainConfig,
};
use serde::Serialize;

use crate::inputs::{data_dir, load_clips, load_splits, load_teacher, resolve, teacher_for, write_toml, DATA_ENV};
use crate::{EvalArgs, FeaturesArgs, SuiteArgs, SynthArgs, TrainArgs, TuneArgs};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| iusp::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = DatasetConfig {
        clip_seconds: a.clip_seconds,
        ..DatasetConfig::new(a.train, a.val, a.test, a.seed)
    };
    cfg.validate()?;
    let manifest = generate_dataset(&cfg, &a.out)?;
    write_toml(&a.out.join("synth.toml"), &cfg)?;
    let n = manifest.rows.train.len() + manifest.rows.val.len() + manifest.rows.test.len();
    println!("wrote {n} clips to {}", a.out.display());
    Ok(())
}

pub fn features(a: &FeaturesArgs) -> Result<()> {
    let Some(data) = data_dir(a.data.as_deref(), None) else {
        bail!(iusp::Error::Config(format!("no dataset: pass --data or set {DATA_ENV}")));
    };
    let pipe = FeaturePipeline::new(a.clip_seconds)?;
    create_dir(&a.out)?;
    for split in Split::ALL {
        let feats = extract_features(&load_clips(&data, split)?, &pipe)?;
        let meta = vec![
            ("clip_seconds".to_string(), a.clip_seconds.to_string()),
            ("source".to_string(), data.display().to_string()),
        ];
        save_features(&a.out.join(format!("{}.feat", split.name())), &feats, meta)?;
        println!("{}: {} clips", split.name(), feats.len());
    }
    Ok(())
}

/// A config with every value spelled out, plus the inputs it was run on.
fn full_config(cfg: &TrainConfig, rc: &RunConfig) -> RunConfig {
    RunConfig {
        data_dir: rc.data_dir.clone(),
        features: rc.features.clone(),
        clip_seconds: rc.clip_seconds,
        teacher: rc.teacher.clone().filter(|_| cfg.setup.needs_teacher()),
        ..RunConfig::from_train(cfg)
    }
}

fn print_result(r: &RunResult) {
    println!(
        "{} h={} seed={} test_micro_auprc={:.6} best_val={:.6} best_epoch={} stopped_epoch={}",
        r.setup, r.lstm_hidden, r.seed, r.test_micro_auprc, r.best_val_micro_auprc, r.best_epoch, r.stopped_epoch
    );
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut rc = resolve(&a.run)?;
    if let Some(s) = &a.setup {
        rc.setup = s.clone();
    }
    rc.lstm_hidden = a.lstm_hidden.or(rc.lstm_hidden);
    rc.model = a.model.clone().or(rc.model);
    rc.teacher_channels = a.teacher_channels.clone().or(rc.teacher_channels);
    rc.teacher_kernel = a.teacher_kernel.or(rc.teacher_kernel);
    let cfg = rc.to_train()?;
    let out = &a.run.out;
    let model = rc.model.clone().unwrap_or_else(|| "student".into());
    let (result, record) = match model.as_str() {
        "student" => {
            let teacher = teacher_for(&rc, cfg.setup.needs_teacher())?;
            let data = load_splits(&rc)?;
            create_dir(out)?;
            let (r, _) = train_student(&cfg, &data, teacher.as_ref(), Some(out))?;
            (r, full_config(&cfg, &rc))
        }
        "teacher" => {
            let d = TeacherConfig::default();
            let tc = TeacherConfig {
                channels: rc.teacher_channels.clone().unwrap_or(d.channels),
                kernel: rc.teacher_kernel.unwrap_or(d.kernel),
                ..d
            };
            let teacher = build_teacher(&tc, cfg.seed)?;
            let data = load_splits(&rc)?;
            create_dir(out)?;
            let (r, _) = train_teacher(teacher, &cfg, &data, Some(out))?;
            let record = RunConfig {
                model: Some(model.clone()),
                teacher_channels: Some(tc.channels),
                teacher_kernel: Some(tc.kernel),
                ..full_config(&cfg, &rc)
            };
            (r, record)
        }
        other => bail!(iusp::Error::Config(format!(
            "unknown model `{other}` (expected student or teacher)"
        ))),
    };
    write_toml(&out.join("config.toml"), &record)?;
    print_result(&result);
    Ok(())
}

fn parse_setups(names: &[String]) -> Result<Vec<Setup>> {
    if names.is_empty() {
        return Ok(Setup::ALL.to_vec());
    }
    Ok(names.iter().map(|s| s.parse()).collect::<iusp::Result<_>>()?)
}

fn sizes_or_default(sizes: &[usize]) -> Vec<usize> {
    if sizes.is_empty() {
        STUDENT_HIDDEN_SIZES.to_vec()
    } else {
        sizes.to_vec()
    }
}

#[derive(Serialize)]
struct SuiteRecord {
    seeds: Vec<u64>,
    lstm_sizes: Vec<usize>,
    runs: Vec<RunConfig>,
}

pub fn suite(a: &SuiteArgs, jobs: usize) -> Result<()> {
    let rc = resolve(&a.run)?;
    let base = rc.to_train()?;
    let setups = parse_setups(&a.setup)?;
    let sizes = sizes_or_default(&a.lstm_hidden);
    let seeds: Vec<u64> = (0..a.trials as u64).map(|i| base.seed + i).collect();
    let sp = rc.hint_sp.as_deref().map(parse_hint_pair).transpose()?.flatten();
    let iusp = rc.hint_iusp.as_deref().map(parse_hint_pair).transpose()?.flatten();
    let configs = setups
        .iter()
        .map(|&s| {
            let mut c = base.with_setup(s);
            if s.uses_sp() && sp.is_some() {
                c.hint_pair_sp = sp;
            }
            if s.uses_iusp() && iusp.is_some() {
                c.hint_pair_iusp = iusp;
            }
            c.validate().map(|()| c)
        })
        .collect::<iusp::Result<Vec<_>>>()?;
    let teacher = teacher_for(&rc, setups.iter().any(|s| s.needs_teacher()))?;
    let data = load_splits(&rc)?;
    create_dir(&a.run.out)?;
    let report = run_setup_suite(&configs, &seeds, &sizes, &data, teacher.as_ref(), jobs, Some(&a.run.out))?;
    write_toml(
        &a.run.out.join("suite.toml"),
        &SuiteRecord {
            seeds,
            lstm_sizes: sizes,
            // sizes and seeds come from the cross product above
            runs: configs
                .iter()
                .map(|c| RunConfig {
                    lstm_hidden: None,
                    seed: None,
                    ..full_config(c, &rc)
                })
                .collect(),
        },
    )?;
    for c in &report.cells {
        println!(
            "{} h={} runs={} failures={} mean={} stderr={} improvement_pct={}",
            c.setup,
            c.lstm_hidden,
            c.runs,
            c.failures,
            c.mean.map_or("-".into(), |v| format!("{v:.6}")),
            c.stderr.map_or("-".into(), |v| format!("{v:.6}")),
            c.improvement_pct.map_or("-".into(), |v| format!("{v:.2}")),
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct TuneRecord {
    trials: usize,
    lstm_sizes: Vec<usize>,
    base: RunConfig,
}

#[derive(Serialize)]
struct BestHints {
    hint_sp: Option<String>,
    hint_iusp: Option<String>,
}

pub fn tune_hints(a: &TuneArgs, jobs: usize) -> Result<()> {
    let mut rc = resolve(&a.run)?;
    rc.setup = a.setup.clone();
    let base = rc.to_train()?;
    let sizes = sizes_or_default(&a.lstm_hidden);
    let Some(tpath) = &rc.teacher else {
        bail!(iusp::Error::Config("hint tuning needs --teacher".into()));
    };
    let teacher = load_teacher(tpath)?;
    let data = load_splits(&rc)?;
    let tunings = tune_hint_layers(&base, &sizes, a.trials, &data, &teacher, jobs)?;
    create_dir(&a.run.out)?;

    let path = a.run.out.join("tuning.csv");
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&path)
        .with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["loss".to_string(), "teacher_layer".into(), "student_layer".into()];
    header.extend(sizes.iter().map(|h| format!("val_micro_auprc_h{h}")));
    header.push("average".into());
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    let mut best = BestHints {
        hint_sp: None,
        hint_iusp: None,
    };
    for t in &tunings {
        for c in &t.scores {
            let mut rec = vec![t.loss.name().to_string(), c.pair.teacher.to_string(), c.pair.student.to_string()];
            rec.extend(c.per_size.iter().map(|v| opt(*v)));
            rec.push(opt(c.average));
            w.write_record(&rec)?;
        }
        let pair = format_hint_pair(Some(t.best));
        println!("{}: best pair {pair} ({} candidates)", t.loss.name(), t.scores.len());
        match t.loss {
            iusp::training::SimilarityLoss::Sp => best.hint_sp = Some(pair),
            iusp::training::SimilarityLoss::Iusp => best.hint_iusp = Some(pair),
        }
    }
    w.flush()?;
    write_toml(&a.run.out.join("hints.toml"), &best)?;
    write_toml(
        &a.run.out.join("tune.toml"),
        &TuneRecord {
            trials: a.trials,
            lstm_sizes: sizes,
            base: full_config(&base, &rc),
        },
    )?;
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let (ids, scores) = read_predictions(&a.pred)?;
    let rows = read_manifest_rows(&a.labels)?;
    let set = PredictionSet::join(ids, scores, &rows)?;
    let curve = micro_pr_curve(&set)?;
    let classwise = classwise_auprc(&set);
    println!("micro_auprc\t{:.6}", curve.auprc);
    for (name, v) in CLASS_NAMES.iter().zip(&classwise) {
        println!("{name}\t{}", v.map_or("undefined".into(), |x| format!("{x:.6}")));
    }
    if let Some(out) = &a.out {
        create_dir(out)?;
        let mut metrics = String::from("metric,value\n");
        metrics.push_str(&format!("micro_auprc,{}\n", curve.auprc));
        for (name, v) in CLASS_NAMES.iter().zip(&classwise) {
            metrics.push_str(&format!("auprc_{name},{}\n", v.map_or_else(String::new, |x| x.to_string())));
        }
        fs::write(out.join("metrics.csv"), metrics)?;
        let mut pr = String::from("threshold,precision,recall,true_positives\n");
        for p in &curve.points {
            pr.push_str(&format!("{},{},{},{}\n", p.threshold, p.precision, p.recall, p.true_positives));
        }
        fs::write(out.join("pr_curve.csv"), pr)?;
        let pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.recall, p.precision)).collect();
        let title = format!("micro PR curve, AUPRC {:.4}", curve.auprc);
        crate::plot::line_chart(&title, "recall", "precision", &[("micro".into(), pts)])
            .save(&out.join("pr_curve.png"))?;
    }
    Ok(())
}
