use crate::autodiff::{BackwardOp, Element, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// `σ(z)` without overflow for large `|z|`.
pub fn sigmoid<T: Element>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Per-entry `−[y ln σ(z) + (1 − y) ln(1 − σ(z))]`, stable for large `|z|`.
pub fn bce_with_logits<T: Element>(z: T, y: T) -> T {
    z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

/// Row-wise softmax in place.
pub fn softmax_rows<T: Element>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

pub(crate) fn validate_binary_targets<T: Element>(op: &'static str, logits: &[usize], targets: &[T]) -> Result<()> {
    let numel: usize = logits.iter().product();
    if logits.len() != 2 || targets.len() != numel {
        return Err(Error::shape(
            op,
            format!(
                "logits {logits:?} need [N, C] with {numel} targets, got {}",
                targets.len()
            ),
        ));
    }
    if let Some(bad) = targets.iter().find(|&&t| t != T::zero() && t != T::one()) {
        return Err(Error::invalid(op, format!("target {bad} is not binary")));
    }
    Ok(())
}

pub(crate) fn validate_labels(op: &'static str, logits: &[usize], labels: &[usize]) -> Result<()> {
    let [n, c] = logits[..] else {
        return Err(Error::shape(op, format!("logits must be [N, C], got {logits:?}")));
    };
    if labels.len() != n {
        return Err(Error::shape(op, format!("{} labels for batch {n}", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::invalid(op, format!("label {bad} outside [0, {c})")));
    }
    Ok(())
}

struct BceBackward<T> {
    targets: Vec<T>,
}

impl<T: Element> BackwardOp<T> for BceBackward<T> {
    fn name(&self) -> &'static str {
        "multilabel_bce_loss"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let z = inputs[0].data();
        let scale = grad_out[0] / T::from_usize(z.len().max(1)).unwrap();
        let dz = z
            .iter()
            .zip(&self.targets)
            .map(|(&z, &y)| (sigmoid(z) - y) * scale)
            .collect();
        vec![Some(dz)]
    }
}

struct SoftmaxCeBackward {
    labels: Vec<usize>,
    classes: usize,
}

impl<T: Element> BackwardOp<T> for SoftmaxCeBackward {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy_loss"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        _needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let mut dz = softmax_rows(inputs[0].data(), self.classes);
        let scale = grad_out[0] / T::from_usize(self.labels.len().max(1)).unwrap();
        for (row, &label) in dz.chunks_mut(self.classes).zip(&self.labels) {
            row[label] -= T::one();
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
        vec![Some(dz)]
    }
}

impl<T: Element> Graph<T> {
    /// Mean sigmoid binary cross-entropy over all `N·C` entries.
    pub fn multilabel_bce_loss(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        validate_binary_targets("multilabel_bce_loss", self.shape(logits), targets)?;
        let z = self.value(logits).data();
        let total: T = z.iter().zip(targets).map(|(&z, &y)| bce_with_logits(z, y)).sum();
        let loss = total / T::from_usize(z.len().max(1)).unwrap();
        let rule = BceBackward {
            targets: targets.to_vec(),
        };
        self.record(Tensor::scalar(loss), vec![logits], Box::new(rule))
    }

    /// Mean negative log-softmax probability of the labelled class.
    pub fn softmax_cross_entropy_loss(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        validate_labels("softmax_cross_entropy_loss", self.shape(logits), labels)?;
        let classes = self.shape(logits)[1];
        let z = self.value(logits).data();
        let mut total = T::zero();
        for (row, &label) in z.chunks(classes).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            total += lse - row[label];
        }
        let loss = total / T::from_usize(labels.len().max(1)).unwrap();
        let rule = SoftmaxCeBackward {
            labels: labels.to_vec(),
            classes,
        };
        self.record(Tensor::scalar(loss), vec![logits], Box::new(rule))
    }
}
