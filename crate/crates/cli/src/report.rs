//! Figures and tables from a suite directory's `results.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use iusp::data::{centered_frame_gram, default_class_specs, render_event_with, CLASS_NAMES};
use iusp::features::{FeaturePipeline, TARGET_RATE};
use iusp::training::{mean_and_stderr, read_results, ResultRow, Setup};

use crate::plot::{bar_chart, spectrogram_and_gram, BarGroup};
use crate::ReportArgs;

/// Example clips: a repetitive tonal class and a nonstationary one.
const EXAMPLES: [&str; 2] = ["alert-signal", "human-voice"];

struct Cell {
    setup: Setup,
    lstm_hidden: usize,
    runs: usize,
    mean: f64,
    stderr: f64,
}

fn cells(rows: &[ResultRow], setups: &[Setup], sizes: &[usize]) -> Vec<Cell> {
    let mut out = Vec::new();
    for &setup in setups {
        for &h in sizes {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.setup == setup && r.lstm_hidden == h)
                .map(|r| r.test_micro_auprc)
                .collect();
            if let Some((mean, stderr)) = mean_and_stderr(&v) {
                out.push(Cell {
                    setup,
                    lstm_hidden: h,
                    runs: v.len(),
                    mean,
                    stderr,
                });
            }
        }
    }
    out
}

fn find(cells: &[Cell], setup: Setup, h: usize) -> Option<&Cell> {
    cells.iter().find(|c| c.setup == setup && c.lstm_hidden == h)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Mean class-wise AUPRC of `setup` over every run and size.
fn class_means(rows: &[ResultRow], setup: Setup) -> Vec<Option<f64>> {
    (0..CLASS_NAMES.len())
        .map(|k| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.setup == setup)
                .filter_map(|r| r.classwise.get(k).copied().flatten())
                .collect();
            mean_and_stderr(&v).map(|m| m.0)
        })
        .collect()
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let results = a.run.join("results.csv");
    if !results.is_file() {
        bail!(iusp::Error::InvalidInput(format!(
            "{} holds no suite results (results.csv missing)",
            a.run.display()
        )));
    }
    let rows = read_results(&results)?;
    if rows.is_empty() {
        bail!(iusp::Error::InvalidInput(format!("{} lists no runs", results.display())));
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let setups: Vec<Setup> = Setup::ALL
        .into_iter()
        .filter(|s| rows.iter().any(|r| r.setup == *s))
        .collect();
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.lstm_hidden).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let cells = cells(&rows, &setups, &sizes);

    // micro AUPRC per setup and size, with standard errors
    let mut csv = String::from("setup,lstm_hidden,runs,mean_test_micro_auprc,stderr\n");
    for c in &cells {
        writeln!(csv, "{},{},{},{},{}", c.setup, c.lstm_hidden, c.runs, c.mean, c.stderr)?;
    }
    write(&a.out.join("micro_auprc.csv"), &csv)?;
    let groups: Vec<BarGroup> = setups
        .iter()
        .map(|&s| BarGroup {
            label: s.name().into(),
            bars: sizes
                .iter()
                .map(|&h| find(&cells, s, h).map(|c| (c.mean, c.stderr)))
                .collect(),
        })
        .collect();
    let series: Vec<String> = sizes.iter().map(|h| format!("LSTM {h}")).collect();
    bar_chart("test micro AUPRC (bars: standard error)", "AUPRC", &groups, &series)
        .save(&a.out.join("micro_auprc.png"))?;

    // improvements over the BCE baseline and over BCE+KD+SP
    let mut csv = String::from(
        "lstm_hidden,setup,mean_test_micro_auprc,abs_over_bce,rel_over_bce_pct,abs_over_sp,rel_over_sp_pct\n",
    );
    for &h in &sizes {
        for &s in &setups {
            let Some(c) = find(&cells, s, h) else { continue };
            let gain = |base: Setup| {
                find(&cells, base, h).map(|b| (c.mean - b.mean, (c.mean - b.mean) / b.mean * 100.0))
            };
            let (bce, sp) = (gain(Setup::Bce), gain(Setup::BceKdSp));
            writeln!(
                csv,
                "{h},{s},{},{},{},{},{}",
                c.mean,
                opt(bce.map(|g| g.0)),
                opt(bce.map(|g| g.1)),
                opt(sp.map(|g| g.0)),
                opt(sp.map(|g| g.1))
            )?;
        }
    }
    write(&a.out.join("improvements.csv"), &csv)?;

    // class-wise AUPRC and its change over BCE
    let base = setups.contains(&Setup::Bce).then(|| class_means(&rows, Setup::Bce));
    let mut csv = String::from("class,setup,mean_auprc,improvement_over_bce_pct\n");
    let mut per_setup = Vec::new();
    for &s in &setups {
        let means = class_means(&rows, s);
        let gains: Vec<Option<f64>> = means
            .iter()
            .enumerate()
            .map(|(k, m)| match (m, base.as_ref().and_then(|b| b[k])) {
                (Some(m), Some(b)) if b > 0.0 => Some((m - b) / b * 100.0),
                _ => None,
            })
            .collect();
        for (k, name) in CLASS_NAMES.iter().enumerate() {
            writeln!(csv, "{name},{s},{},{}", opt(means[k]), opt(gains[k]))?;
        }
        per_setup.push((s, means, gains));
    }
    write(&a.out.join("classwise.csv"), &csv)?;
    let (shown, title, use_gain): (Vec<_>, _, _) = if base.is_some() && setups.len() > 1 {
        (
            per_setup.iter().filter(|p| p.0 != Setup::Bce).collect(),
            "class-wise AUPRC change over BCE (%)",
            true,
        )
    } else {
        (per_setup.iter().collect(), "class-wise AUPRC", false)
    };
    let groups: Vec<BarGroup> = CLASS_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| BarGroup {
            label: (*name).into(),
            bars: shown
                .iter()
                .map(|(_, m, g)| if use_gain { g[k] } else { m[k] }.map(|v| (v, 0.0)))
                .collect(),
        })
        .collect();
    let series: Vec<String> = shown.iter().map(|p| p.0.name().to_string()).collect();
    bar_chart(title, if use_gain { "%" } else { "AUPRC" }, &groups, &series)
        .save(&a.out.join("classwise.png"))?;

    // example clips: spectrogram beside its frame similarity matrix
    let specs = default_class_specs();
    let pipe = FeaturePipeline::new(a.clip_seconds)?;
    for name in EXAMPLES {
        let k = CLASS_NAMES.iter().position(|c| *c == name).expect("example class exists");
        let (wave, _) = render_event_with(&specs[k], a.seed, a.clip_seconds, TARGET_RATE)?;
        let (teacher_in, _) = pipe.extract_pair(&wave)?;
        let spec = teacher_in.values();
        let gram = centered_frame_gram(spec)?;
        spectrogram_and_gram(name, spec, &gram).save(&a.out.join(format!("similarity_{name}.png")))?;
        let mut csv = String::new();
        for row in gram.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.6e}")).collect();
            csv.push_str(&line.join(","));
            csv.push('\n');
        }
        write(&a.out.join(format!("similarity_{name}.csv")), &csv)?;
    }
    println!(
        "report for {} runs ({} setups, {} sizes) written to {}",
        rows.len(),
        setups.len(),
        sizes.len(),
        a.out.display()
    );
    Ok(())
}
