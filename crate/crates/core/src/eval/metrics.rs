use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// One-vs-rest counts of a single class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2·tp / (2·tp + fp + fn)`, 0 when the denominator is 0.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

impl std::ops::AddAssign for ClassCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfusionCounts {
    Multilabel(Vec<ClassCounts>),
    /// Row-major `C×C` matrix, rows true class, columns predicted class.
    Multiclass {
        classes: usize,
        matrix: Vec<u64>,
    },
}

impl ConfusionCounts {
    pub fn classes(&self) -> usize {
        match self {
            ConfusionCounts::Multilabel(v) => v.len(),
            ConfusionCounts::Multiclass { classes, .. } => *classes,
        }
    }

    /// One-vs-rest counts per class.
    pub fn per_class(&self) -> Vec<ClassCounts> {
        match self {
            ConfusionCounts::Multilabel(v) => v.clone(),
            ConfusionCounts::Multiclass { classes, matrix } => {
                let c = *classes;
                let total: u64 = matrix.iter().sum();
                (0..c)
                    .map(|k| {
                        let tp = matrix[k * c + k];
                        let row: u64 = matrix[k * c..(k + 1) * c].iter().sum();
                        let col: u64 = (0..c).map(|r| matrix[r * c + k]).sum();
                        ClassCounts {
                            tp,
                            fp: col - tp,
                            fn_: row - tp,
                            tn: total + tp - row - col,
                        }
                    })
                    .collect()
            }
        }
    }

    /// Windows counted (class-window entries for multilabel).
    pub fn total(&self) -> u64 {
        match self {
            ConfusionCounts::Multilabel(v) => v.iter().map(ClassCounts::total).sum(),
            ConfusionCounts::Multiclass { matrix, .. } => matrix.iter().sum(),
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) -> Result<()> {
        match (self, other) {
            (ConfusionCounts::Multilabel(a), ConfusionCounts::Multilabel(b)) if a.len() == b.len() => {
                for (x, &y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                Ok(())
            }
            (
                ConfusionCounts::Multiclass { classes: ca, matrix: a },
                ConfusionCounts::Multiclass { classes: cb, matrix: b },
            ) if ca == cb => {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(())
            }
            _ => Err(Error::shape("merge_counts", "confusion tables differ in kind or size")),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Thresholds `sigmoid(logits)` at `threshold` and scores each class against
/// multi-hot `targets`; both are row-major `[N, C]`.
pub fn per_class_f1(
    logits: &[f64],
    targets: &[f32],
    classes: usize,
    threshold: f64,
) -> Result<(Vec<f64>, ConfusionCounts)> {
    if classes == 0 || logits.len() != targets.len() || !logits.len().is_multiple_of(classes) {
        return Err(Error::shape(
            "per_class_f1",
            format!(
                "{} predictions vs {} targets for {classes} classes",
                logits.len(),
                targets.len()
            ),
        ));
    }
    let mut counts = vec![ClassCounts::default(); classes];
    for (i, (&z, &y)) in logits.iter().zip(targets).enumerate() {
        let c = &mut counts[i % classes];
        match (sigmoid(z) >= threshold, y > 0.5) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    let f1 = counts.iter().map(ClassCounts::f1).collect();
    Ok((f1, ConfusionCounts::Multilabel(counts)))
}

/// Confusion matrix of arg-max predictions.
pub fn multiclass_confusion(logits: &[f64], labels: &[usize], classes: usize) -> Result<ConfusionCounts> {
    if classes == 0 || logits.len() != labels.len() * classes {
        return Err(Error::shape(
            "multiclass_confusion",
            format!(
                "{} logits for {} labels and {classes} classes",
                logits.len(),
                labels.len()
            ),
        ));
    }
    let mut matrix = vec![0u64; classes * classes];
    for (row, &y) in logits.chunks(classes).zip(labels) {
        if y >= classes {
            return Err(Error::shape("multiclass_confusion", format!("label {y} >= {classes}")));
        }
        matrix[y * classes + argmax(row)] += 1;
    }
    Ok(ConfusionCounts::Multiclass { classes, matrix })
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn multiclass_accuracy(logits: &[f64], labels: &[usize], classes: usize) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Data("accuracy of an empty set".into()));
    }
    let ConfusionCounts::Multiclass { matrix, .. } = multiclass_confusion(logits, labels, classes)? else {
        unreachable!()
    };
    let correct: u64 = (0..classes).map(|k| matrix[k * classes + k]).sum();
    Ok(correct as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroF1 {
    /// Mean F1 over classes with at least one true positive.
    pub predicted: f64,
    /// Mean F1 over all classes.
    pub all: f64,
    pub n_predicted: usize,
    /// Set when no class has a true positive; `predicted` is then 0.
    pub empty_predicted: bool,
}

pub fn macro_f1(f1: &[f64], counts: &[ClassCounts]) -> MacroF1 {
    let hit: Vec<f64> = f1
        .iter()
        .zip(counts)
        .filter(|(_, c)| c.tp >= 1)
        .map(|(&f, _)| f)
        .collect();
    let all = if f1.is_empty() {
        0.0
    } else {
        f1.iter().sum::<f64>() / f1.len() as f64
    };
    MacroF1 {
        predicted: if hit.is_empty() {
            0.0
        } else {
            hit.iter().sum::<f64>() / hit.len() as f64
        },
        all,
        n_predicted: hit.len(),
        empty_predicted: hit.is_empty(),
    }
}

/// Mean and sample standard deviation over repeats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl std::fmt::Display for Aggregate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = f.precision().unwrap_or(2);
        write!(f, "{:.p$} ± {:.p$}", self.mean, self.std)
    }
}

pub fn aggregate_repeats(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::Data("no repeats to aggregate".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(Aggregate { mean, std, n })
}
