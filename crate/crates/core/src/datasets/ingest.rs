//! Manifest-driven preprocessing into a windowed dataset.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::datasets::bit::read_bit_tensor;
use crate::datasets::classes::{map_labels, ClassRegistry};
use crate::datasets::manifest::{load_manifest, Modality, RecordingMeta};
use crate::datasets::preprocess::{preprocess_ecg, window_eeg_de, ECG_WINDOW, EEG_BANDS, EEG_WINDOW};
use crate::datasets::splits::make_ecg_split;
use crate::datasets::windows::{DatasetInfo, Target, Window, WindowDataset};
use crate::error::{Error, Result};
use crate::models::Task;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub recordings: usize,
    /// Recordings dropped because none of their codes is a scored class.
    pub excluded: Vec<String>,
    pub windows: usize,
    /// Unscored codes and how often they were dropped.
    pub unknown_codes: BTreeMap<String, usize>,
}

struct Processed {
    windows: Vec<Window>,
    unknown: Vec<String>,
    excluded: bool,
}

fn process_one(meta: &RecordingMeta, base: &Path, registry: &ClassRegistry) -> Result<Processed> {
    let mapped = map_labels(&meta.labels, registry);
    let target = match (meta.modality, mapped.target) {
        (_, None) => {
            return Ok(Processed {
                windows: Vec::new(),
                unknown: mapped.unknown,
                excluded: true,
            })
        }
        (Modality::Ecg, Some(v)) => Target::MultiHot(v),
        (Modality::EegDe, Some(v)) => {
            let hot: Vec<usize> = (0..v.len()).filter(|&i| v[i] > 0.5).collect();
            match hot[..] {
                [c] => Target::Class(c),
                _ => {
                    return Err(Error::Data(format!(
                        "EEG recording `{}` needs exactly one emotion label",
                        meta.id
                    )))
                }
            }
        }
    };
    let path = meta.resolve_path(base);
    let (signal, _) = read_bit_tensor(&path)?;
    let signal: Tensor<f64> = signal.into_tensor();
    let tensors = match meta.modality {
        Modality::Ecg => {
            if signal.shape().first() != Some(&meta.n_channels) {
                return Err(Error::Data(format!(
                    "recording `{}`: manifest says {} channels, file has shape {:?}",
                    meta.id,
                    meta.n_channels,
                    signal.shape()
                )));
            }
            preprocess_ecg(&signal, meta.fs_hz)?
        }
        Modality::EegDe => window_eeg_de(&signal)?,
    };
    let windows = tensors
        .into_iter()
        .enumerate()
        .map(|(i, t)| Window {
            id: format!("{}_{i:04}", meta.id),
            recording: meta.id.clone(),
            domain: meta.domain.clone(),
            data: t.cast(),
            target: target.clone(),
            split: None,
        })
        .collect();
    Ok(Processed {
        windows,
        unknown: mapped.unknown,
        excluded: false,
    })
}

/// Preprocesses every recording of one modality. ECG datasets get the fixed
/// source/target split; EEG splits are chosen per leave-one-domain-out run.
///
/// Recordings are processed in parallel and merged in manifest order.
pub fn ingest_manifest(
    manifest: &Path,
    registry: Option<&ClassRegistry>,
    seed: u64,
) -> Result<(WindowDataset, IngestReport)> {
    let metas = load_manifest(manifest)?;
    let modality = metas
        .first()
        .map(|m| m.modality)
        .ok_or_else(|| Error::Data(format!("{} lists no recordings", manifest.display())))?;
    if let Some(m) = metas.iter().find(|m| m.modality != modality) {
        return Err(Error::Data(format!(
            "recording `{}` mixes modalities in one manifest",
            m.id
        )));
    }
    let registry = match (modality, registry) {
        (Modality::Ecg, Some(r)) => r.clone(),
        (Modality::Ecg, None) => ClassRegistry::ecg_default(),
        (Modality::EegDe, _) => ClassRegistry::eeg(),
    };
    let base = manifest.parent().unwrap_or(Path::new("."));
    let processed: Vec<Processed> = metas
        .par_iter()
        .map(|m| process_one(m, base, &registry))
        .collect::<Result<_>>()?;

    let mut report = IngestReport {
        recordings: metas.len(),
        ..Default::default()
    };
    let mut windows = Vec::new();
    for (meta, p) in metas.iter().zip(processed) {
        for code in p.unknown {
            *report.unknown_codes.entry(code).or_default() += 1;
        }
        if p.excluded {
            report.excluded.push(meta.id.clone());
        }
        windows.extend(p.windows);
    }
    report.windows = windows.len();
    let mut domains: Vec<String> = metas.iter().map(|m| m.domain.clone()).collect();
    domains.sort();
    domains.dedup();
    let (task, length) = match modality {
        Modality::Ecg => (Task::Multilabel, ECG_WINDOW),
        Modality::EegDe => (Task::Multiclass, EEG_WINDOW),
    };
    let mut ds = WindowDataset {
        info: DatasetInfo {
            task,
            class_names: registry.names().to_vec(),
            channels: match modality {
                Modality::Ecg => 12,
                Modality::EegDe => EEG_BANDS,
            },
            length,
            domains,
        },
        windows,
    };
    if modality == Modality::Ecg {
        let plan = make_ecg_split(&ds.recordings(), seed)?;
        ds.apply_plan(&plan)?;
    }
    ds.validate()?;
    Ok((ds, report))
}
