//! CSV manifests: `clip_id` followed by one 0/1 column per class.
//!
//! Real DCASE-style annotations convert by collapsing each coarse class to
//! "present if any annotator marked it" and writing one row per clip.

use std::fs::File;
use std::path::Path;

use super::{LabeledClip, Labels, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::features::read_wav;
use crate::models::NUM_CLASSES;

pub const MANIFEST_HEADER: [&str; NUM_CLASSES + 1] = [
    "clip_id",
    CLASS_NAMES[0],
    CLASS_NAMES[1],
    CLASS_NAMES[2],
    CLASS_NAMES[3],
    CLASS_NAMES[4],
    CLASS_NAMES[5],
    CLASS_NAMES[6],
    CLASS_NAMES[7],
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub clip_id: String,
    pub labels: Labels,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => parse_err(path, line, format!("{other:?}")),
    }
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file);
    w.write_record(MANIFEST_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let mut rec = vec![r.clip_id.clone()];
        rec.extend(r.labels.iter().map(|&b| if b { "1" } else { "0" }.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses and validates a manifest without touching audio.
pub fn read_manifest_rows(path: &Path) -> Result<Vec<ManifestRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().map(str::trim).ne(MANIFEST_HEADER.iter().copied()) {
        return Err(parse_err(
            path,
            1,
            format!("expected header `{}`", MANIFEST_HEADER.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let clip_id = rec[0].trim();
        if clip_id.is_empty() {
            return Err(parse_err(path, line, "empty clip_id"));
        }
        let mut labels = [false; NUM_CLASSES];
        for (c, slot) in labels.iter_mut().enumerate() {
            *slot = match rec[c + 1].trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(parse_err(
                        path,
                        line,
                        format!("label `{other}` for {} is not 0 or 1", CLASS_NAMES[c]),
                    ))
                }
            };
        }
        rows.push(ManifestRow {
            clip_id: clip_id.to_string(),
            labels,
        });
    }
    Ok(rows)
}

/// Loads every row's `<audio_dir>/<clip_id>.wav`.
pub fn load_manifest(csv_path: &Path, audio_dir: &Path) -> Result<Vec<LabeledClip>> {
    read_manifest_rows(csv_path)?
        .into_iter()
        .map(|row| {
            let wav = audio_dir.join(format!("{}.wav", row.clip_id));
            if !wav.is_file() {
                return Err(Error::MissingAudio {
                    clip_id: row.clip_id,
                    path: wav,
                });
            }
            Ok(LabeledClip {
                waveform: read_wav(&wav)?,
                clip_id: row.clip_id,
                labels: row.labels,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn header_only_is_empty() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "m.csv", &format!("{}\n", MANIFEST_HEADER.join(",")));
        assert!(load_manifest(&p, d.path()).unwrap().is_empty());
    }

    #[test]
    fn bad_label_names_line() {
        let d = tempfile::tempdir().unwrap();
        let body = format!("{}\na,0,0,0,0,0,0,0,1\nb,0,2,0,0,0,0,0,0\n", MANIFEST_HEADER.join(","));
        let p = write(d.path(), "m.csv", &body);
        match read_manifest_rows(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_header_rejected() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "m.csv", "clip_id,a,b\n");
        assert!(matches!(read_manifest_rows(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn short_row_is_parse_error() {
        let d = tempfile::tempdir().unwrap();
        let body = format!("{}\na,0,1\n", MANIFEST_HEADER.join(","));
        let p = write(d.path(), "m.csv", &body);
        assert!(matches!(read_manifest_rows(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn missing_audio_names_clip() {
        let d = tempfile::tempdir().unwrap();
        let body = format!("{}\nghost,1,0,0,0,0,0,0,0\n", MANIFEST_HEADER.join(","));
        let p = write(d.path(), "m.csv", &body);
        match load_manifest(&p, d.path()) {
            Err(Error::MissingAudio { clip_id, .. }) => assert_eq!(clip_id, "ghost"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rows_roundtrip_with_lf() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("m.csv");
        let rows = vec![ManifestRow {
            clip_id: "x".into(),
            labels: [true, false, false, true, false, false, false, true],
        }];
        write_manifest(&p, &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(!text.contains('\r'));
        assert_eq!(read_manifest_rows(&p).unwrap(), rows);
    }
}
