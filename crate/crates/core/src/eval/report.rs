use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::DType;
use crate::dg::RunLog;
use crate::error::{Error, Result};
use crate::eval::metrics::{aggregate_repeats, macro_f1, Aggregate, ClassCounts, ConfusionCounts};
use crate::models::{analytic_param_count, count_macs, peak_memory_estimate, ModelConfig, Task};

pub const SUMMARY_FILE: &str = "metrics.json";
pub const TABLE_FILE: &str = "report.txt";
pub const RUN_LOG_FILE: &str = "runlog.csv";

/// Scores of one evaluation, or of several repeats merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub task: Task,
    pub class_names: Vec<String>,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub per_class_f1: Vec<f64>,
    pub n_predicted_classes: usize,
    pub macro_f1_predicted: f64,
    pub macro_f1_all: f64,
    pub predicted_set_empty: bool,
    /// Multi-class only.
    pub accuracy: Option<f64>,
    /// Headline value of each repeat: accuracy, or Macro-F1 (All) for multi-label.
    pub repeats: Vec<f64>,
    pub summary: Aggregate,
}

impl MetricsReport {
    pub fn from_counts(class_names: Vec<String>, counts: ConfusionCounts, threshold: f64) -> Result<Self> {
        if class_names.len() != counts.classes() {
            return Err(Error::shape(
                "metrics_report",
                format!("{} class names for {} classes", class_names.len(), counts.classes()),
            ));
        }
        let per = counts.per_class();
        let f1: Vec<f64> = per.iter().map(ClassCounts::f1).collect();
        let m = macro_f1(&f1, &per);
        let (task, accuracy) = match &counts {
            ConfusionCounts::Multilabel(_) => (Task::Multilabel, None),
            ConfusionCounts::Multiclass { classes, matrix } => {
                let total: u64 = matrix.iter().sum();
                let correct: u64 = (0..*classes).map(|k| matrix[k * classes + k]).sum();
                let acc = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
                (Task::Multiclass, Some(acc))
            }
        };
        let headline = accuracy.unwrap_or(m.all);
        Ok(MetricsReport {
            task,
            class_names,
            threshold,
            counts,
            per_class_f1: f1,
            n_predicted_classes: m.n_predicted,
            macro_f1_predicted: m.predicted,
            macro_f1_all: m.all,
            predicted_set_empty: m.empty_predicted,
            accuracy,
            repeats: vec![headline],
            summary: aggregate_repeats(&[headline])?,
        })
    }

    /// Merges repeats: counts are summed, scores averaged, and the number of
    /// predicted classes counts classes hit in any repeat.
    pub fn merge_repeats(reports: &[MetricsReport]) -> Result<Self> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Data("no repeats to merge".into()))?;
        let mut counts = first.counts.clone();
        for r in &reports[1..] {
            if r.class_names != first.class_names {
                return Err(Error::Data("repeats disagree on class names".into()));
            }
            counts.merge(&r.counts)?;
        }
        let n = reports.len() as f64;
        let mean = |f: &dyn Fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let per_class_f1 = (0..first.per_class_f1.len())
            .map(|c| mean(&|r| r.per_class_f1[c]))
            .collect();
        let n_predicted = counts.per_class().iter().filter(|c| c.tp >= 1).count();
        let repeats: Vec<f64> = reports.iter().flat_map(|r| r.repeats.iter().copied()).collect();
        Ok(MetricsReport {
            task: first.task,
            class_names: first.class_names.clone(),
            threshold: first.threshold,
            counts,
            per_class_f1,
            n_predicted_classes: n_predicted,
            macro_f1_predicted: mean(&|r| r.macro_f1_predicted),
            macro_f1_all: mean(&|r| r.macro_f1_all),
            predicted_set_empty: n_predicted == 0,
            accuracy: first.accuracy.map(|_| mean(&|r| r.accuracy.unwrap_or(0.0))),
            summary: aggregate_repeats(&repeats)?,
            repeats,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexityReport {
    pub input_shape: [usize; 2],
    pub dtype: DType,
    pub params: u64,
    pub macs_per_sample: u64,
    pub peak_bytes: u64,
}

impl ComplexityReport {
    pub fn compute(config: &ModelConfig, input_shape: [usize; 2], dtype: DType) -> Result<Self> {
        Ok(ComplexityReport {
            input_shape,
            dtype,
            params: analytic_param_count(config)?,
            macs_per_sample: count_macs(config, input_shape)?,
            peak_bytes: peak_memory_estimate(config, input_shape, dtype.size())?,
        })
    }
}

/// One scored split, e.g. group `CHI`, split `ood`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Section {
    pub group: String,
    pub split: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub title: String,
    pub sections: Vec<Section>,
    pub complexity: Option<ComplexityReport>,
    #[serde(skip)]
    pub run_log: Option<RunLog>,
}

fn pad_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for r in rows {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let pad = widths[c] - s.chars().count();
                if c == 0 {
                    format!("{s}{}", " ".repeat(pad))
                } else {
                    format!("{}{s}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn pct(agg: &Aggregate) -> String {
    format!("{:.2} ± {:.2}", 100.0 * agg.mean, 100.0 * agg.std)
}

fn multilabel_table(sections: &[&Section]) -> String {
    let first = &sections[0].metrics;
    let mut rows = vec![std::iter::once("Class".to_string())
        .chain(sections.iter().map(|s| format!("{} {}", s.group, s.split)))
        .collect::<Vec<_>>()];
    for (c, name) in first.class_names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(sections.iter().map(|s| format!("{:.3}", s.metrics.per_class_f1[c])));
        rows.push(row);
    }
    let summary: [(&str, fn(&MetricsReport) -> String); 3] = [
        ("Macro-F1 (Predicted)", |m| format!("{:.3}", m.macro_f1_predicted)),
        ("Macro-F1 (All)", |m| format!("{:.3}", m.macro_f1_all)),
        ("# of Predicted Classes", |m| m.n_predicted_classes.to_string()),
    ];
    for (label, f) in summary {
        let mut row = vec![label.to_string()];
        row.extend(sections.iter().map(|s| f(&s.metrics)));
        rows.push(row);
    }
    pad_table(&rows)
}

fn multiclass_table(sections: &[&Section]) -> String {
    let mut splits: Vec<&str> = Vec::new();
    let mut groups: Vec<&str> = Vec::new();
    for s in sections {
        if !splits.contains(&s.split.as_str()) {
            splits.push(&s.split);
        }
        if !groups.contains(&s.group.as_str()) {
            groups.push(&s.group);
        }
    }
    let mut rows = vec![std::iter::once("Target".to_string())
        .chain(splits.iter().map(|s| format!("{s} accuracy (%)")))
        .collect::<Vec<_>>()];
    for g in groups {
        let mut row = vec![g.to_string()];
        for sp in &splits {
            let cell = sections
                .iter()
                .find(|s| s.group == g && s.split == *sp)
                .map_or_else(|| "-".to_string(), |s| pct(&s.metrics.summary));
            row.push(cell);
        }
        rows.push(row);
    }
    pad_table(&rows)
}

/// Plain-text tables: per-class F1 with the three summary rows for
/// multi-label sections, accuracy mean ± std per target for multi-class ones.
pub fn render_tables(report: &Report) -> String {
    let mut out = format!("{}\n\n", report.title);
    let ml: Vec<&Section> = report
        .sections
        .iter()
        .filter(|s| s.metrics.task == Task::Multilabel)
        .collect();
    let mc: Vec<&Section> = report
        .sections
        .iter()
        .filter(|s| s.metrics.task == Task::Multiclass)
        .collect();
    if !ml.is_empty() {
        out.push_str(&multilabel_table(&ml));
        out.push('\n');
    }
    if !mc.is_empty() {
        out.push_str(&multiclass_table(&mc));
        out.push('\n');
    }
    if let Some(c) = &report.complexity {
        let rows = vec![
            vec![
                "Input".to_string(),
                format!("{}x{}", c.input_shape[0], c.input_shape[1]),
            ],
            vec!["Parameters".to_string(), c.params.to_string()],
            vec!["MACs per sample".to_string(), c.macs_per_sample.to_string()],
            vec![
                format!("Peak memory ({}, bytes)", c.dtype.as_str()),
                c.peak_bytes.to_string(),
            ],
        ];
        out.push_str(&pad_table(&rows));
    }
    if let Some(log) = &report.run_log {
        let _ = writeln!(out, "\nEpochs trained: {}", log.records.len());
    }
    out
}

/// Writes the JSON summary, the text tables and, when present, the run log.
pub fn write_report(report: &Report, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Data(e.to_string()))?;
    let write = |name: &str, text: &str| {
        let path = out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    };
    write(SUMMARY_FILE, &json)?;
    write(TABLE_FILE, &render_tables(report))?;
    if let Some(log) = &report.run_log {
        log.write(&out_dir.join(RUN_LOG_FILE))?;
    }
    Ok(())
}

pub fn read_report(out_dir: &Path) -> Result<Report> {
    let path = out_dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut report: Report =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let log = out_dir.join(RUN_LOG_FILE);
    if log.exists() {
        report.run_log = Some(RunLog::read(&log)?);
    }
    Ok(report)
}
