use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Element, Graph, Mode};
use crate::datasets::{Target, WindowDataset};
use crate::dg::gather;
use crate::error::{Error, Result};
use crate::eval::metrics::{multiclass_confusion, per_class_f1};
use crate::eval::report::MetricsReport;
use crate::models::{Model, Task};

const CHUNK: usize = 64;

fn check_input<T: Element>(model: &Model<T>, data: &WindowDataset, indices: &[usize]) -> Result<()> {
    let cfg = model.net.config();
    if cfg.backbone.in_channels != data.info.channels {
        return Err(Error::shape(
            "predict",
            format!(
                "model expects {} channels, windows have {}",
                cfg.backbone.in_channels, data.info.channels
            ),
        ));
    }
    if cfg.num_classes != data.num_classes() {
        return Err(Error::shape(
            "predict",
            format!(
                "model has {} classes, dataset has {}",
                cfg.num_classes,
                data.num_classes()
            ),
        ));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= data.windows.len()) {
        return Err(Error::Data(format!("window index {bad} out of range")));
    }
    Ok(())
}

/// Eval-mode forward over `indices`: logits `[n, C]` and head inputs `[n, D]`,
/// both row-major.
pub fn predict<T: Element>(
    model: &mut Model<T>,
    data: &WindowDataset,
    indices: &[usize],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_input(model, data, indices)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut logits = Vec::new();
    let mut embeddings = Vec::new();
    for chunk in indices.chunks(CHUNK) {
        let (x, _) = gather::<T>(data, chunk)?;
        let mut g = Graph::new();
        let xv = g.constant(x);
        let out = model.forward(&mut g, xv, Mode::Eval, &mut rng)?;
        logits.extend(g.value(out.logits).data().iter().map(|v| v.to_f64_lossy()));
        embeddings.extend(g.value(out.embedding).data().iter().map(|v| v.to_f64_lossy()));
    }
    Ok((logits, embeddings))
}

pub fn predict_logits<T: Element>(model: &mut Model<T>, data: &WindowDataset, indices: &[usize]) -> Result<Vec<f64>> {
    predict(model, data, indices).map(|(l, _)| l)
}

/// Scores the model on `indices`. Multi-label predictions use
/// `sigmoid ≥ threshold`; multi-class ones use the arg-max.
pub fn evaluate_model<T: Element>(
    model: &mut Model<T>,
    data: &WindowDataset,
    indices: &[usize],
    threshold: f64,
) -> Result<MetricsReport> {
    if indices.is_empty() {
        return Err(Error::Data("no windows to evaluate".into()));
    }
    let logits = predict_logits(model, data, indices)?;
    let classes = data.num_classes();
    let counts = match data.info.task {
        Task::Multilabel => {
            let mut targets = Vec::with_capacity(indices.len() * classes);
            for &i in indices {
                match &data.windows[i].target {
                    Target::MultiHot(v) => targets.extend_from_slice(v),
                    Target::Class(_) => return Err(Error::Data("class target in a multilabel dataset".into())),
                }
            }
            per_class_f1(&logits, &targets, classes, threshold)?.1
        }
        Task::Multiclass => {
            let labels = indices
                .iter()
                .map(|&i| match data.windows[i].target {
                    Target::Class(c) => Ok(c),
                    Target::MultiHot(_) => Err(Error::Data("multi-hot target in a multiclass dataset".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            multiclass_confusion(&logits, &labels, classes)?
        }
    };
    MetricsReport::from_counts(data.info.class_names.clone(), counts, threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub window_id: String,
    pub domain: String,
    pub label: String,
    pub values: Vec<f64>,
}

/// Head-input vectors of the given windows in eval mode.
pub fn embed_windows<T: Element>(
    model: &mut Model<T>,
    data: &WindowDataset,
    indices: &[usize],
) -> Result<Vec<EmbeddingRow>> {
    let (_, emb) = predict(model, data, indices)?;
    let width = model.net.head_in();
    Ok(indices
        .iter()
        .zip(emb.chunks(width))
        .map(|(&i, v)| {
            let w = &data.windows[i];
            EmbeddingRow {
                window_id: w.id.clone(),
                domain: w.domain.clone(),
                label: w.target.encode(),
                values: v.to_vec(),
            }
        })
        .collect())
}

/// CSV with columns `window_id,domain,label,e0,..,e{D-1}`.
pub fn write_embeddings(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    let width = rows.first().map_or(0, |r| r.values.len());
    let err = |e: csv::Error| Error::Data(format!("writing {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec!["window_id".to_string(), "domain".into(), "label".into()];
    header.extend((0..width).map(|k| format!("e{k}")));
    w.write_record(&header).map_err(err)?;
    for r in rows {
        let mut rec = vec![r.window_id.clone(), r.domain.clone(), r.label.clone()];
        rec.extend(r.values.iter().map(f64::to_string));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let err = |e: csv::Error| Error::Data(format!("reading {}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(err)?;
        let values = rec
            .iter()
            .skip(3)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(EmbeddingRow {
            window_id: rec[0].to_string(),
            domain: rec[1].to_string(),
            label: rec[2].to_string(),
            values,
        });
    }
    Ok(rows)
}

pub fn export_embeddings<T: Element>(
    model: &mut Model<T>,
    data: &WindowDataset,
    indices: &[usize],
    path: &Path,
) -> Result<usize> {
    let rows = embed_windows(model, data, indices)?;
    write_embeddings(path, &rows)?;
    Ok(rows.len())
}
