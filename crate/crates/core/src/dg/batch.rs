use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{Element, Tensor};
use crate::datasets::{Target, WindowDataset};
use crate::error::{Error, Result};
use crate::models::Task;

/// Targets of a batch, row-aligned with its inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchTargets<T> {
    Classes(Vec<usize>),
    /// Row-major `[N, C]` multi-hot matrix.
    MultiHot(Vec<T>),
}

impl<T: Element> BatchTargets<T> {
    pub fn task(&self) -> Task {
        match self {
            BatchTargets::Classes(_) => Task::Multiclass,
            BatchTargets::MultiHot(_) => Task::Multilabel,
        }
    }

    /// Rows `start..end` of a target set with `classes` columns.
    pub fn rows(&self, start: usize, end: usize, classes: usize) -> Self {
        match self {
            BatchTargets::Classes(v) => BatchTargets::Classes(v[start..end].to_vec()),
            BatchTargets::MultiHot(v) => BatchTargets::MultiHot(v[start * classes..end * classes].to_vec()),
        }
    }

    pub fn concat(parts: &[&BatchTargets<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Data("no targets to join".into()))?;
        match first {
            BatchTargets::Classes(_) => {
                let mut out = Vec::new();
                for p in parts {
                    let BatchTargets::Classes(v) = p else {
                        return Err(Error::Data("mixed target kinds in one batch".into()));
                    };
                    out.extend_from_slice(v);
                }
                Ok(BatchTargets::Classes(out))
            }
            BatchTargets::MultiHot(_) => {
                let mut out = Vec::new();
                for p in parts {
                    let BatchTargets::MultiHot(v) = p else {
                        return Err(Error::Data("mixed target kinds in one batch".into()));
                    };
                    out.extend_from_slice(v);
                }
                Ok(BatchTargets::MultiHot(out))
            }
        }
    }

    /// Multi-hot `[N, C]` view: one-hot rows for class targets.
    pub fn indicator(&self, classes: usize) -> Vec<T> {
        match self {
            BatchTargets::Classes(v) => {
                let mut out = vec![T::zero(); v.len() * classes];
                for (i, &c) in v.iter().enumerate() {
                    out[i * classes + c] = T::one();
                }
                out
            }
            BatchTargets::MultiHot(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubBatch<T> {
    pub domain: String,
    /// `[n, C, L]`.
    pub inputs: Tensor<T>,
    pub targets: BatchTargets<T>,
}

/// Per-domain sub-batches of one update.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBatch<T> {
    pub parts: Vec<SubBatch<T>>,
}

/// Concatenates `[n_i, ...]` tensors along the first axis.
pub fn concat_rows<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::shape("concat_rows", "no tensors"))?;
    let tail = first.shape()[1..].to_vec();
    let mut rows = 0;
    let mut data = Vec::new();
    for p in parts {
        if p.shape()[1..] != tail[..] {
            return Err(Error::shape(
                "concat_rows",
                format!("{:?} vs {:?}", p.shape(), first.shape()),
            ));
        }
        rows += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    let mut shape = vec![rows];
    shape.extend(tail);
    Tensor::new(shape, data)
}

impl<T: Element> DomainBatch<T> {
    pub fn len(&self) -> usize {
        self.parts.iter().map(|p| p.inputs.dim(0)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row ranges of each sub-batch within the pooled batch.
    pub fn offsets(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.parts
            .iter()
            .map(|p| {
                let end = start + p.inputs.dim(0);
                let r = (start, end);
                start = end;
                r
            })
            .collect()
    }

    /// All sub-batches stacked into one input tensor and target set.
    pub fn pooled(&self) -> Result<(Tensor<T>, BatchTargets<T>)> {
        if self.parts.is_empty() {
            return Err(Error::Data("empty domain batch".into()));
        }
        let inputs: Vec<&Tensor<T>> = self.parts.iter().map(|p| &p.inputs).collect();
        let targets: Vec<&BatchTargets<T>> = self.parts.iter().map(|p| &p.targets).collect();
        Ok((concat_rows(&inputs)?, BatchTargets::concat(&targets)?))
    }
}

/// Gathers windows into a `[n, C, L]` input tensor and their targets.
pub fn gather<T: Element>(data: &WindowDataset, indices: &[usize]) -> Result<(Tensor<T>, BatchTargets<T>)> {
    let (c, l) = (data.info.channels, data.info.length);
    let mut inputs = Vec::with_capacity(indices.len() * c * l);
    let classes = data.num_classes();
    let targets = match data.info.task {
        Task::Multiclass => {
            let mut v = Vec::with_capacity(indices.len());
            for &i in indices {
                let Target::Class(t) = data.windows[i].target else {
                    return Err(Error::Data("multi-hot target in a multiclass dataset".into()));
                };
                v.push(t);
            }
            BatchTargets::Classes(v)
        }
        Task::Multilabel => {
            let mut v = Vec::with_capacity(indices.len() * classes);
            for &i in indices {
                let Target::MultiHot(t) = &data.windows[i].target else {
                    return Err(Error::Data("class target in a multilabel dataset".into()));
                };
                v.extend(t.iter().map(|&x| T::from_f64_lossy(x as f64)));
            }
            BatchTargets::MultiHot(v)
        }
    };
    for &i in indices {
        inputs.extend(data.windows[i].data.data().iter().map(|&x| T::from_f64_lossy(x as f64)));
    }
    Ok((Tensor::new(vec![indices.len(), c, l], inputs)?, targets))
}

/// Equal-size per-domain sub-batches drawn without replacement from a
/// shuffled permutation of each domain, reshuffled once exhausted.
#[derive(Debug, Clone)]
pub struct DomainSampler {
    domains: Vec<(String, Vec<usize>)>,
    cursors: Vec<usize>,
    per_domain: usize,
    total: usize,
}

impl DomainSampler {
    /// `indices` select the training windows; they are grouped by domain in
    /// name order. Each update draws `batch_size / n_domains` per domain.
    pub fn new<R: Rng + ?Sized>(
        data: &WindowDataset,
        indices: &[usize],
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Data("no training windows".into()));
        }
        let mut groups: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
        for &i in indices {
            groups.entry(data.windows[i].domain.as_str()).or_default().push(i);
        }
        let n = groups.len();
        let per_domain = (batch_size / n).max(1);
        let mut domains: Vec<(String, Vec<usize>)> = groups.into_iter().map(|(d, v)| (d.to_string(), v)).collect();
        for (_, v) in &mut domains {
            v.shuffle(rng);
        }
        Ok(DomainSampler {
            cursors: vec![0; domains.len()],
            domains,
            per_domain,
            total: indices.len(),
        })
    }

    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.domains.iter().map(|(d, _)| d.as_str())
    }

    /// Updates per pass over the training windows.
    pub fn steps_per_epoch(&self) -> usize {
        let per_step = self.per_domain * self.domains.len();
        self.total.div_ceil(per_step).max(1)
    }

    pub fn next_indices<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::with_capacity(self.domains.len());
        for ((name, pool), cursor) in self.domains.iter_mut().zip(&mut self.cursors) {
            let mut picked = Vec::with_capacity(self.per_domain);
            while picked.len() < self.per_domain {
                if *cursor == pool.len() {
                    pool.shuffle(rng);
                    *cursor = 0;
                }
                picked.push(pool[*cursor]);
                *cursor += 1;
            }
            out.push((name.clone(), picked));
        }
        out
    }

    pub fn next_batch<T: Element, R: Rng + ?Sized>(
        &mut self,
        data: &WindowDataset,
        rng: &mut R,
    ) -> Result<DomainBatch<T>> {
        let parts = self
            .next_indices(rng)
            .into_iter()
            .map(|(domain, idx)| {
                let (inputs, targets) = gather(data, &idx)?;
                Ok(SubBatch {
                    domain,
                    inputs,
                    targets,
                })
            })
            .collect::<Result<_>>()?;
        Ok(DomainBatch { parts })
    }
}
