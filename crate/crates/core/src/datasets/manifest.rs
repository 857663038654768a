use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "ecg")]
    Ecg,
    #[serde(rename = "eeg-de")]
    EegDe,
}

impl Modality {
    /// Channel count after preprocessing.
    pub fn channels(self) -> usize {
        match self {
            Modality::Ecg => 12,
            Modality::EegDe => 5,
        }
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingMeta {
    pub id: String,
    /// Signal file, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub modality: Modality,
    pub fs_hz: f64,
    pub n_channels: usize,
    pub domain: String,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_samples: Option<usize>,
}

impl RecordingMeta {
    pub fn resolve_path(&self, manifest_dir: &Path) -> PathBuf {
        if self.path.is_absolute() {
            self.path.clone()
        } else {
            manifest_dir.join(&self.path)
        }
    }
}

/// Parses newline-delimited JSON records; blank lines are skipped.
pub fn parse_manifest(path: &Path, text: &str) -> Result<Vec<RecordingMeta>> {
    let mut metas: Vec<RecordingMeta> = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |detail: String| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            detail,
        };
        let meta: RecordingMeta = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if !(meta.fs_hz > 0.0 && meta.fs_hz.is_finite()) {
            return Err(err(format!("fs_hz must be positive, got {}", meta.fs_hz)));
        }
        if meta.n_channels == 0 {
            return Err(err("n_channels must be >= 1".into()));
        }
        if !ids.insert(meta.id.clone()) {
            return Err(err(format!("duplicate id `{}`", meta.id)));
        }
        metas.push(meta);
    }
    Ok(metas)
}

pub fn load_manifest(path: &Path) -> Result<Vec<RecordingMeta>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_manifest(path, &text)
}

pub fn write_manifest(path: &Path, metas: &[RecordingMeta]) -> Result<()> {
    let mut text = String::new();
    for m in metas {
        text.push_str(&serde_json::to_string(m).expect("meta serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
