//! In-memory windowed datasets and their on-disk directory form:
//! `dataset.json`, `index.csv` and one BIT file per window under `windows/`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::datasets::bit::{read_bit_as, write_bit_tensor};
use crate::datasets::splits::{Assignment, SplitPlan};
use crate::error::{Error, Result};
use crate::models::Task;

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    MultiHot(Vec<f32>),
}

impl Target {
    /// Index-file encoding: the class index, or `;`-joined hot indices.
    pub fn encode(&self) -> String {
        match self {
            Target::Class(c) => c.to_string(),
            Target::MultiHot(v) => v
                .iter()
                .enumerate()
                .filter(|(_, &x)| x > 0.5)
                .map(|(i, _)| i.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        }
    }

    pub fn decode(text: &str, task: Task, classes: usize) -> Result<Self> {
        let bad = || Error::Data(format!("bad target `{text}` for {classes} classes"));
        let index = |s: &str| -> Result<usize> {
            let i: usize = s.trim().parse().map_err(|_| bad())?;
            if i < classes {
                Ok(i)
            } else {
                Err(bad())
            }
        };
        match task {
            Task::Multiclass => Ok(Target::Class(index(text)?)),
            Task::Multilabel => {
                let mut v = vec![0.0; classes];
                for part in text.split(';').filter(|s| !s.trim().is_empty()) {
                    v[index(part)?] = 1.0;
                }
                Ok(Target::MultiHot(v))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub id: String,
    pub recording: String,
    pub domain: String,
    pub data: Tensor<f32>,
    pub target: Target,
    pub split: Option<Assignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetInfo {
    pub task: Task,
    pub class_names: Vec<String>,
    pub channels: usize,
    pub length: usize,
    pub domains: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    pub info: DatasetInfo,
    pub windows: Vec<Window>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexRow {
    window_id: String,
    recording_id: String,
    domain: String,
    target: String,
    split: String,
}

impl WindowDataset {
    pub fn num_classes(&self) -> usize {
        self.info.class_names.len()
    }

    /// Distinct `(recording, domain)` pairs in first-seen order.
    pub fn recordings(&self) -> Vec<(String, String)> {
        let mut seen = BTreeSet::new();
        self.windows
            .iter()
            .filter(|w| seen.insert(w.recording.as_str()))
            .map(|w| (w.recording.clone(), w.domain.clone()))
            .collect()
    }

    /// Assigns every window the split of its parent recording.
    pub fn apply_plan(&mut self, plan: &SplitPlan) -> Result<()> {
        for w in &mut self.windows {
            w.split = Some(
                plan.get(&w.recording)
                    .ok_or_else(|| Error::Data(format!("split plan does not cover recording `{}`", w.recording)))?,
            );
        }
        Ok(())
    }

    pub fn indices(&self, split: Assignment) -> Vec<usize> {
        (0..self.windows.len())
            .filter(|&i| self.windows[i].split == Some(split))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let classes = self.num_classes();
        let mut ids = BTreeSet::new();
        for w in &self.windows {
            if w.data.shape() != [self.info.channels, self.info.length] {
                return Err(Error::Data(format!(
                    "window `{}` has shape {:?}, dataset declares [{}, {}]",
                    w.id,
                    w.data.shape(),
                    self.info.channels,
                    self.info.length
                )));
            }
            let ok = match (&w.target, self.info.task) {
                (Target::Class(c), Task::Multiclass) => *c < classes,
                (Target::MultiHot(v), Task::Multilabel) => v.len() == classes,
                _ => false,
            };
            if !ok {
                return Err(Error::Data(format!(
                    "window `{}` has a target unfit for the task",
                    w.id
                )));
            }
            if !ids.insert(w.id.as_str()) {
                return Err(Error::Data(format!("duplicate window id `{}`", w.id)));
            }
        }
        Ok(())
    }
}

pub const INFO_FILE: &str = "dataset.json";
pub const INDEX_FILE: &str = "index.csv";
pub const WINDOW_DIR: &str = "windows";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path.display().to_string(), e)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

pub fn save_dataset(dir: &Path, ds: &WindowDataset) -> Result<()> {
    ds.validate()?;
    let win_dir = dir.join(WINDOW_DIR);
    fs::create_dir_all(&win_dir).map_err(io(&win_dir))?;
    let info_path = dir.join(INFO_FILE);
    let info = serde_json::to_string_pretty(&ds.info).expect("info serializes");
    fs::write(&info_path, info).map_err(io(&info_path))?;
    let index_path = dir.join(INDEX_FILE);
    let mut writer = csv::Writer::from_path(&index_path).map_err(|e| csv_err(&index_path, e))?;
    for w in &ds.windows {
        write_bit_tensor(&win_dir.join(format!("{}.bit", w.id)), &w.data)?;
        writer
            .serialize(IndexRow {
                window_id: w.id.clone(),
                recording_id: w.recording.clone(),
                domain: w.domain.clone(),
                target: w.target.encode(),
                split: w.split.map(|s| s.as_str().to_string()).unwrap_or_default(),
            })
            .map_err(|e| csv_err(&index_path, e))?;
    }
    writer.flush().map_err(io(&index_path))
}

pub fn load_dataset(dir: &Path) -> Result<WindowDataset> {
    let info_path = dir.join(INFO_FILE);
    let text = fs::read_to_string(&info_path).map_err(io(&info_path))?;
    let info: DatasetInfo =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", info_path.display())))?;
    let index_path = dir.join(INDEX_FILE);
    let mut reader = csv::Reader::from_path(&index_path).map_err(|e| csv_err(&index_path, e))?;
    let mut windows = Vec::new();
    for row in reader.deserialize::<IndexRow>() {
        let row = row.map_err(|e| csv_err(&index_path, e))?;
        let split = match row.split.as_str() {
            "" => None,
            s => Some(Assignment::parse(s).ok_or_else(|| Error::Data(format!("unknown split `{s}`")))?),
        };
        let data = read_bit_as(&dir.join(WINDOW_DIR).join(format!("{}.bit", row.window_id)))?;
        windows.push(Window {
            target: Target::decode(&row.target, info.task, info.class_names.len())?,
            id: row.window_id,
            recording: row.recording_id,
            domain: row.domain,
            data,
            split,
        });
    }
    let ds = WindowDataset { info, windows };
    ds.validate()?;
    Ok(ds)
}
