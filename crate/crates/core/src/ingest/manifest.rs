//! Tab-separated dataset manifests.
//!
//! One record per line: `path<TAB>label[<TAB>mask]`. Labels are `0` (fake)
//! or `1` (real). The optional mask is a run-length list of per-frame labels,
//! e.g. `1:50,0:25`. Lines starting with `#` are comments, except
//! `# split: <train|val|test>` which records the split. Relative paths are
//! resolved against the manifest's directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ManifestError {
    #[error("manifest {0} does not exist")]
    MissingFile(String),
    #[error("manifest line {line}: {reason}")]
    MalformedEntry { line: usize, reason: String },
    #[error("manifest line {line}: label {value:?} is not 0 (fake) or 1 (real)")]
    LabelOutOfRange { line: usize, value: String },
    #[error("cannot write manifest {path}: {reason}")]
    Write { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Fake = 0,
    Real = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn is_fake(self) -> bool {
        self == Label::Fake
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Label::Fake),
            1 => Ok(Label::Real),
            other => Err(format!("label {other} out of range")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Fake => "Fake",
            Label::Real => "Real",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Label,
    /// Per-frame labels, when known.
    pub mask: Option<Vec<Label>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub split: Option<Split>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn has_both_classes(&self) -> bool {
        let real = self.entries.iter().any(|e| e.label == Label::Real);
        let fake = self.entries.iter().any(|e| e.label == Label::Fake);
        real && fake
    }
}

fn parse_label(s: &str, line: usize) -> Result<Label, ManifestError> {
    let v: i64 = s.trim().parse().map_err(|_| ManifestError::MalformedEntry {
        line,
        reason: format!("label {s:?} is not an integer"),
    })?;
    match v {
        0 => Ok(Label::Fake),
        1 => Ok(Label::Real),
        _ => Err(ManifestError::LabelOutOfRange {
            line,
            value: s.trim().to_string(),
        }),
    }
}

pub fn parse_mask(s: &str, line: usize) -> Result<Vec<Label>, ManifestError> {
    let mut mask = Vec::new();
    for run in s.split(',') {
        let (label, count) = run.split_once(':').ok_or_else(|| ManifestError::MalformedEntry {
            line,
            reason: format!("mask run {run:?} is not label:count"),
        })?;
        let label = parse_label(label, line)?;
        let count: usize = count.trim().parse().map_err(|_| ManifestError::MalformedEntry {
            line,
            reason: format!("mask run length {count:?} is not a count"),
        })?;
        mask.extend(std::iter::repeat_n(label, count));
    }
    Ok(mask)
}

pub fn format_mask(mask: &[Label]) -> String {
    let mut runs: Vec<(Label, usize)> = Vec::new();
    for &l in mask {
        match runs.last_mut() {
            Some((prev, n)) if *prev == l => *n += 1,
            _ => runs.push((l, 1)),
        }
    }
    runs.iter()
        .map(|(l, n)| format!("{}:{n}", l.as_u8()))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, ManifestError> {
    let text = fs::read_to_string(path)
        .map_err(|_| ManifestError::MissingFile(path.display().to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut manifest = DatasetManifest::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(split) = comment.trim().strip_prefix("split:") {
                manifest.split = Some(split.parse().map_err(|reason| ManifestError::MalformedEntry {
                    line,
                    reason,
                })?);
            }
            continue;
        }
        let fields: Vec<&str> = raw.trim_end_matches(['\r', '\n']).split('\t').collect();
        if !(2..=3).contains(&fields.len()) || fields[0].is_empty() {
            return Err(ManifestError::MalformedEntry {
                line,
                reason: format!("expected path<TAB>label[<TAB>mask], got {} field(s)", fields.len()),
            });
        }
        let label = parse_label(fields[1], line)?;
        let mask = match fields.get(2).map(|m| m.trim()) {
            Some(m) if !m.is_empty() => Some(parse_mask(m, line)?),
            _ => None,
        };
        let p = Path::new(fields[0]);
        let path = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        manifest.entries.push(ManifestEntry { path, label, mask });
    }
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), ManifestError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = String::new();
    if let Some(split) = manifest.split {
        out.push_str(&format!("# split: {split}\n"));
    }
    for e in &manifest.entries {
        let rel = e.path.strip_prefix(base).unwrap_or(&e.path);
        out.push_str(&rel.display().to_string());
        out.push('\t');
        out.push_str(&e.label.as_u8().to_string());
        if let Some(mask) = &e.mask {
            out.push('\t');
            out.push_str(&format_mask(mask));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| ManifestError::Write {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}
