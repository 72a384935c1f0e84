//! Config resolution (flags > config file > `$IUSP_DATA_DIR`) and data loading.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use iusp::data::{extract_features, load_features, load_manifest, ClipFeatures, Split, Splits};
use iusp::features::{FeaturePipeline, CLIP_SECONDS};
use iusp::models::{Model, Teacher};
use iusp::training::RunConfig;

use crate::RunOpts;

pub const DATA_ENV: &str = "IUSP_DATA_DIR";

pub fn data_dir(flag: Option<&Path>, config: Option<&Path>) -> Option<PathBuf> {
    flag.or(config)
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
}

/// The config file (if any) with every flag applied on top.
pub fn resolve(opts: &RunOpts) -> Result<RunConfig> {
    let mut rc = match &opts.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig {
            setup: "BCE".into(),
            ..RunConfig::default()
        },
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = &opts.$field {
                rc.$field = Some(v.clone());
            }
        )*};
    }
    set!(seed, lr, max_epochs, patience, batch_size, teacher, features, clip_seconds, hint_sp, hint_iusp);
    rc.data_dir = data_dir(opts.data.as_deref(), rc.data_dir.as_deref());
    Ok(rc)
}

fn feature_file(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.feat", split.name()))
}

fn load_feature_dir(dir: &Path) -> Result<Splits<ClipFeatures>> {
    let load = |s: Split| {
        let p = feature_file(dir, s);
        load_features(&p).with_context(|| format!("loading {}", p.display()))
    };
    Ok(Splits {
        train: load(Split::Train)?,
        val: load(Split::Val)?,
        test: load(Split::Test)?,
    })
}

pub fn load_clips(data: &Path, split: Split) -> Result<Vec<iusp::data::LabeledClip>> {
    let csv = data.join(format!("{}.csv", split.name()));
    Ok(load_manifest(&csv, &data.join("audio"))?)
}

pub fn extract_dir(data: &Path, clip_seconds: f64) -> Result<Splits<ClipFeatures>> {
    let pipe = FeaturePipeline::new(clip_seconds)?;
    let run = |s: Split| -> Result<Vec<ClipFeatures>> { Ok(extract_features(&load_clips(data, s)?, &pipe)?) };
    Ok(Splits {
        train: run(Split::Train)?,
        val: run(Split::Val)?,
        test: run(Split::Test)?,
    })
}

/// Features from `features`, else `<data>/features`, else extracted from the
/// dataset's WAVs.
pub fn load_splits(rc: &RunConfig) -> Result<Splits<ClipFeatures>> {
    if let Some(dir) = &rc.features {
        return load_feature_dir(dir);
    }
    let Some(data) = &rc.data_dir else {
        bail!(iusp::Error::Config(format!(
            "no data: pass --data or --features, or set {DATA_ENV}"
        )));
    };
    let cached = data.join("features");
    if feature_file(&cached, Split::Train).is_file() {
        return load_feature_dir(&cached);
    }
    extract_dir(data, rc.clip_seconds.unwrap_or(CLIP_SECONDS))
}

pub fn load_teacher(path: &Path) -> Result<Teacher> {
    match Model::load(path)? {
        Model::Teacher(t) => Ok(t),
        Model::Student(_) => bail!(iusp::Error::Config(format!(
            "{} is a student checkpoint, expected a teacher",
            path.display()
        ))),
    }
}

/// Loads the teacher when `needed`; errors if none was configured.
pub fn teacher_for(rc: &RunConfig, needed: bool) -> Result<Option<Teacher>> {
    match (&rc.teacher, needed) {
        (Some(p), true) => load_teacher(p).map(Some),
        (None, true) => bail!(iusp::Error::Config(
            "this setup distills from a teacher: pass --teacher".into()
        )),
        _ => Ok(None),
    }
}

pub fn write_toml<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).context("serializing config")?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
