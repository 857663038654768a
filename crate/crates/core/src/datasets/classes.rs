use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Scored ECG diagnoses, in report row order.
pub const ECG_CLASSES: [&str; 24] = [
    "1st degree AV block",
    "Atrial fibrillation",
    "Atrial flutter",
    "Bradycardia",
    "Complete right bundle branch block",
    "Incomplete right bundle branch block",
    "Left anterior fascicular block",
    "Left axis deviation",
    "Left bundle branch block",
    "Low QRS voltages",
    "Non-specific intraventricular conduction disorder",
    "Pacing rhythm",
    "Premature ventricular contractions",
    "Prolonged PR interval",
    "Prolonged QT interval",
    "Q wave abnormal",
    "Right axis deviation",
    "Sinus arrhythmia",
    "Sinus bradycardia",
    "Sinus rhythm",
    "Sinus tachycardia",
    "Supraventricular premature beats",
    "T wave abnormal",
    "T wave inversion",
];

pub const EEG_CLASSES: [&str; 3] = ["Negative", "Neutral", "Positive"];

/// Default diagnosis-code table shipped with the crate.
pub const DEFAULT_CLASS_MAP: &str = include_str!("../../data/class_map.tsv");

/// Ordered class names plus a many-to-one code table onto them.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassRegistry {
    names: Vec<String>,
    codes: HashMap<String, usize>,
}

/// Outcome of mapping a recording's label codes.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedLabels {
    /// Multi-hot target, `None` when no code hit a registered class.
    pub target: Option<Vec<f32>>,
    /// Codes that matched no class and were dropped.
    pub unknown: Vec<String>,
}

impl ClassRegistry {
    pub fn ecg_default() -> Self {
        Self::ecg_from_tsv(DEFAULT_CLASS_MAP).expect("bundled class map is valid")
    }

    pub fn eeg() -> Self {
        let names: Vec<String> = EEG_CLASSES.iter().map(|s| s.to_string()).collect();
        let mut codes = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            codes.insert(n.to_lowercase(), i);
            codes.insert(format!("{}", i as i32 - 1), i);
        }
        ClassRegistry { names, codes }
    }

    /// Parses a `code<TAB>name` table onto the 24 scored ECG classes.
    /// A `code name` header line is skipped.
    pub fn ecg_from_tsv(text: &str) -> Result<Self> {
        let names: Vec<String> = ECG_CLASSES.iter().map(|s| s.to_string()).collect();
        let mut codes = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') || (lineno == 0 && line.starts_with("code")) {
                continue;
            }
            let (code, name) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("class map line {}: expected code<TAB>name", lineno + 1)))?;
            let idx = names.iter().position(|n| n == name.trim()).ok_or_else(|| {
                Error::Data(format!(
                    "class map line {}: unknown class `{}`",
                    lineno + 1,
                    name.trim()
                ))
            })?;
            codes.insert(code.trim().to_string(), idx);
        }
        Ok(ClassRegistry { names, codes })
    }

    pub fn load_ecg(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::ecg_from_tsv(&text)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of_code(&self, code: &str) -> Option<usize> {
        self.codes
            .get(code.trim())
            .or_else(|| self.codes.get(&code.trim().to_lowercase()))
            .copied()
    }

    pub fn index_of_name(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

pub fn map_labels(codes: &[String], registry: &ClassRegistry) -> MappedLabels {
    let mut target = vec![0.0f32; registry.len()];
    let mut hit = false;
    let mut unknown = Vec::new();
    for code in codes {
        match registry.index_of_code(code) {
            Some(i) => {
                target[i] = 1.0;
                hit = true;
            }
            None => unknown.push(code.clone()),
        }
    }
    MappedLabels {
        target: hit.then_some(target),
        unknown,
    }
}
