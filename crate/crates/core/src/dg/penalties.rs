//! Cross-domain alignment penalties as differentiable graph ops.

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, softmax_rows, BackwardOp, Element, Graph, Tensor, Var};
use crate::dg::batch::BatchTargets;
use crate::error::{Error, Result};

fn feature_dims<T: Element>(op: &'static str, g: &Graph<T>, features: &[Var]) -> Result<usize> {
    if features.len() < 2 {
        return Err(Error::invalid(
            op,
            format!("needs >= 2 domains, got {}", features.len()),
        ));
    }
    let d = match g.shape(features[0]) {
        [_, d] => *d,
        s => return Err(Error::shape(op, format!("features must be [N, D], got {s:?}"))),
    };
    for (i, &f) in features.iter().enumerate() {
        match g.shape(f) {
            [n, dd] if *dd == d => {
                if *n < 2 {
                    return Err(Error::invalid(op, format!("domain {i} has {n} samples, needs >= 2")));
                }
            }
            s => {
                return Err(Error::shape(
                    op,
                    format!("domain {i} features {s:?}, expected [N, {d}]"),
                ))
            }
        }
    }
    Ok(d)
}

/// Mean over unordered pairs of a two-domain penalty.
fn pairwise_mean<T: Element>(
    g: &mut Graph<T>,
    features: &[Var],
    mut pair: impl FnMut(&mut Graph<T>, Var, Var) -> Result<Var>,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    let mut pairs = 0usize;
    for i in 0..features.len() {
        for j in i + 1..features.len() {
            let p = pair(g, features[i], features[j])?;
            total = Some(match total {
                Some(t) => g.add(t, p)?,
                None => p,
            });
            pairs += 1;
        }
    }
    let total = total.expect("at least one pair");
    g.scale(total, T::one() / T::from_usize(pairs).unwrap())
}

fn column_means<T: Element>(x: &[T], n: usize, d: usize) -> Vec<T> {
    let mut mu = vec![T::zero(); d];
    for row in x.chunks(d) {
        for (m, &v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    let nf = T::from_usize(n).unwrap();
    mu.iter_mut().for_each(|m| *m /= nf);
    mu
}

fn centered<T: Element>(x: &[T], mu: &[T]) -> Vec<T> {
    let d = mu.len();
    x.iter().enumerate().map(|(i, &v)| v - mu[i % d]).collect()
}

/// `(N−1)`-normalized covariance `X̃ᵀX̃ / (N−1)` as a `[D, D]` buffer.
fn covariance<T: Element>(xc: &[T], n: usize, d: usize) -> Vec<T> {
    let mut c = vec![T::zero(); d * d];
    T::gemm(d, n, d, xc, true, xc, false, T::zero(), &mut c);
    let denom = T::from_usize(n - 1).unwrap();
    c.iter_mut().for_each(|v| *v /= denom);
    c
}

struct CoralPairBackward<T> {
    n: [usize; 2],
    d: usize,
    centered: [Vec<T>; 2],
    mean_diff: Vec<T>,
    cov_diff: Vec<T>,
}

impl<T: Element> BackwardOp<T> for CoralPairBackward<T> {
    fn name(&self) -> &'static str {
        "coral_pair"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let d = self.d;
        let two = T::from_f64_lossy(2.0);
        // dL/dC_i = 2 (C_i − C_j), symmetric.
        let gcov: Vec<T> = self.cov_diff.iter().map(|&v| two * v).collect();
        (0..2)
            .map(|side| {
                needs[side].then(|| {
                    let n = self.n[side];
                    let sign = if side == 0 { T::one() } else { -T::one() };
                    let mut grad = vec![T::zero(); n * d];
                    T::gemm(n, d, d, &self.centered[side], false, &gcov, false, T::zero(), &mut grad);
                    let cov_scale = two / T::from_usize(n - 1).unwrap();
                    let mean_scale = two / T::from_usize(n).unwrap();
                    for (i, v) in grad.iter_mut().enumerate() {
                        let mean_term = mean_scale * self.mean_diff[i % d];
                        *v = grad_out[0] * sign * (cov_scale * *v + mean_term);
                    }
                    grad
                })
            })
            .collect()
    }
}

impl<T: Element> Graph<T> {
    /// `‖μ_a − μ_b‖² + ‖C_a − C_b‖²_F` for two `[N, D]` feature sets.
    pub fn coral_pair(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = feature_dims("coral_penalty", self, &[a, b])?;
        let (na, nb) = (self.shape(a)[0], self.shape(b)[0]);
        let mu_a = column_means(self.value(a).data(), na, d);
        let mu_b = column_means(self.value(b).data(), nb, d);
        let ca = centered(self.value(a).data(), &mu_a);
        let cb = centered(self.value(b).data(), &mu_b);
        let cov_a = covariance(&ca, na, d);
        let cov_b = covariance(&cb, nb, d);
        let mean_diff: Vec<T> = mu_a.iter().zip(&mu_b).map(|(&x, &y)| x - y).collect();
        let cov_diff: Vec<T> = cov_a.iter().zip(&cov_b).map(|(&x, &y)| x - y).collect();
        let value = mean_diff.iter().map(|&v| v * v).sum::<T>() + cov_diff.iter().map(|&v| v * v).sum::<T>();
        let rule = CoralPairBackward {
            n: [na, nb],
            d,
            centered: [ca, cb],
            mean_diff,
            cov_diff,
        };
        self.record(Tensor::scalar(value), vec![a, b], Box::new(rule))
    }

    /// Mean CORAL distance over all unordered domain pairs.
    pub fn coral_penalty(&mut self, features: &[Var]) -> Result<Var> {
        feature_dims("coral_penalty", self, features)?;
        pairwise_mean(self, features, |g, a, b| g.coral_pair(a, b))
    }
}

/// Kernel bandwidths for the MMD penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    /// `scale × median pairwise squared distance` of the pooled pair, per scale.
    Median(Vec<f64>),
    /// Fixed bandwidths, independent of the data.
    Fixed(Vec<f64>),
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::Median(vec![0.5, 1.0, 2.0])
    }
}

impl Bandwidth {
    pub fn validate(&self) -> Result<()> {
        let v = match self {
            Bandwidth::Median(v) | Bandwidth::Fixed(v) => v,
        };
        if v.is_empty() || v.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!(
                "MMD bandwidths must be positive and non-empty, got {v:?}"
            )));
        }
        Ok(())
    }
}

fn pairwise_sq_dists<T: Element>(z: &[T], rows: usize, d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * rows];
    for a in 0..rows {
        for b in a + 1..rows {
            let s: T = z[a * d..(a + 1) * d]
                .iter()
                .zip(&z[b * d..(b + 1) * d])
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum();
            out[a * rows + b] = s;
            out[b * rows + a] = s;
        }
    }
    out
}

/// Median of the off-diagonal squared distances; 1 when that median is 0.
fn median_sq_dist<T: Element>(dist: &[T], rows: usize) -> T {
    let mut upper: Vec<T> = (0..rows)
        .flat_map(|a| (a + 1..rows).map(move |b| (a, b)))
        .map(|(a, b)| dist[a * rows + b])
        .collect();
    upper.sort_by(|x, y| x.partial_cmp(y).expect("finite distances"));
    let m = upper.len();
    let median = if m % 2 == 1 {
        upper[m / 2]
    } else {
        (upper[m / 2 - 1] + upper[m / 2]) / T::from_f64_lossy(2.0)
    };
    if median > T::zero() {
        median
    } else {
        T::one()
    }
}

struct MmdPairBackward<T> {
    n: [usize; 2],
    d: usize,
    pooled: Vec<T>,
    /// `Σ_b 4·W_ab·∂K_ab/∂d²_ab`, row-major `[rows, rows]`.
    coeff: Vec<T>,
}

impl<T: Element> BackwardOp<T> for MmdPairBackward<T> {
    fn name(&self) -> &'static str {
        "mmd_pair"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let rows = self.n[0] + self.n[1];
        let d = self.d;
        let mut grad = vec![T::zero(); rows * d];
        for a in 0..rows {
            let za = &self.pooled[a * d..(a + 1) * d];
            let ga = &mut grad[a * d..(a + 1) * d];
            for b in 0..rows {
                let c = self.coeff[a * rows + b];
                if c == T::zero() {
                    continue;
                }
                let zb = &self.pooled[b * d..(b + 1) * d];
                for k in 0..d {
                    ga[k] += c * (za[k] - zb[k]);
                }
            }
        }
        grad.iter_mut().for_each(|v| *v *= grad_out[0]);
        let split = self.n[0] * d;
        let second = grad.split_off(split);
        vec![needs[0].then_some(grad), needs[1].then_some(second)]
    }
}

impl<T: Element> Graph<T> {
    /// Biased MMD² between two `[N, D]` feature sets with a sum of Gaussian
    /// kernels `exp(−d² / bw)`. Median-heuristic bandwidths are treated as
    /// constants when differentiating.
    pub fn mmd_pair(&mut self, a: Var, b: Var, bandwidth: &Bandwidth) -> Result<Var> {
        bandwidth.validate()?;
        let d = feature_dims("mmd_penalty", self, &[a, b])?;
        let n = [self.shape(a)[0], self.shape(b)[0]];
        let rows = n[0] + n[1];
        let mut pooled = self.value(a).data().to_vec();
        pooled.extend_from_slice(self.value(b).data());
        let dist = pairwise_sq_dists(&pooled, rows, d);
        let bws: Vec<T> = match bandwidth {
            Bandwidth::Median(scales) => {
                let med = median_sq_dist(&dist, rows);
                scales.iter().map(|&s| T::from_f64_lossy(s) * med).collect()
            }
            Bandwidth::Fixed(v) => v.iter().map(|&s| T::from_f64_lossy(s)).collect(),
        };
        let (fa, fb) = (T::from_usize(n[0]).unwrap(), T::from_usize(n[1]).unwrap());
        let weight = |x: usize, y: usize| match (x < n[0], y < n[0]) {
            (true, true) => T::one() / (fa * fa),
            (false, false) => T::one() / (fb * fb),
            _ => -T::one() / (fa * fb),
        };
        let four = T::from_f64_lossy(4.0);
        let mut value = T::zero();
        let mut coeff = vec![T::zero(); rows * rows];
        for x in 0..rows {
            for y in 0..rows {
                let dd = dist[x * rows + y];
                let (mut k, mut dk) = (T::zero(), T::zero());
                for &bw in &bws {
                    let e = (-dd / bw).exp();
                    k += e;
                    dk -= e / bw;
                }
                let w = weight(x, y);
                value += w * k;
                coeff[x * rows + y] = four * w * dk;
            }
        }
        let rule = MmdPairBackward { n, d, pooled, coeff };
        self.record(Tensor::scalar(value), vec![a, b], Box::new(rule))
    }

    /// Mean MMD² over all unordered domain pairs.
    pub fn mmd_penalty(&mut self, features: &[Var], bandwidth: &Bandwidth) -> Result<Var> {
        feature_dims("mmd_penalty", self, features)?;
        pairwise_mean(self, features, |g, a, b| g.mmd_pair(a, b, bandwidth))
    }
}

/// `∂R/∂w` at `w = 1` for `R(w) = risk(w · logits)` and its derivative with
/// respect to every logit.
pub fn irm_scale_gradient<T: Element>(logits: &[T], classes: usize, targets: &BatchTargets<T>) -> (T, Vec<T>) {
    let mut dg = vec![T::zero(); logits.len()];
    let mut g = T::zero();
    match targets {
        BatchTargets::Classes(labels) => {
            let n = labels.len();
            let inv = T::one() / T::from_usize(n).unwrap();
            let p = softmax_rows(logits, classes);
            for (i, &label) in labels.iter().enumerate() {
                let row = i * classes..(i + 1) * classes;
                let z = &logits[row.clone()];
                let pr = &p[row.clone()];
                let zbar: T = z.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                for k in 0..classes {
                    let y = if k == label { T::one() } else { T::zero() };
                    g += (pr[k] - y) * z[k];
                    dg[i * classes + k] = inv * (pr[k] - y + pr[k] * (z[k] - zbar));
                }
            }
            g *= inv;
        }
        BatchTargets::MultiHot(y) => {
            let inv = T::one() / T::from_usize(logits.len()).unwrap();
            for ((&z, &y), d) in logits.iter().zip(y).zip(dg.iter_mut()) {
                let s = sigmoid(z);
                g += (s - y) * z;
                *d = inv * (s * (T::one() - s) * z + s - y);
            }
            g *= inv;
        }
    }
    (g, dg)
}

struct IrmBackward<T> {
    g: T,
    dg: Vec<T>,
}

impl<T: Element> BackwardOp<T> for IrmBackward<T> {
    fn name(&self) -> &'static str {
        "irm_domain_penalty"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad_out: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>> {
        let scale = T::from_f64_lossy(2.0) * self.g * grad_out[0];
        vec![needs[0].then(|| self.dg.iter().map(|&v| scale * v).collect())]
    }
}

impl<T: Element> Graph<T> {
    /// `(∂R_e/∂w |_{w=1})²` for one domain's `[N, C]` logits.
    pub fn irm_domain_penalty(&mut self, logits: Var, targets: &BatchTargets<T>) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let [n, c] = shape[..] else {
            return Err(Error::shape(
                "irm_penalty",
                format!("logits must be [N, C], got {shape:?}"),
            ));
        };
        let ok = match targets {
            BatchTargets::Classes(l) => l.len() == n && l.iter().all(|&v| v < c),
            BatchTargets::MultiHot(y) => y.len() == n * c,
        };
        if n == 0 || !ok {
            return Err(Error::shape(
                "irm_penalty",
                format!("targets do not fit logits {shape:?}"),
            ));
        }
        let (g, dg) = irm_scale_gradient(self.value(logits).data(), c, targets);
        self.record(Tensor::scalar(g * g), vec![logits], Box::new(IrmBackward { g, dg }))
    }

    /// IRMv1 penalty: sum over domains of the squared risk gradient with
    /// respect to a scalar multiplier on the logits.
    pub fn irm_penalty(&mut self, domains: &[(Var, BatchTargets<T>)]) -> Result<Var> {
        if domains.len() < 2 {
            return Err(Error::invalid(
                "irm_penalty",
                format!("needs >= 2 domains, got {}", domains.len()),
            ));
        }
        let mut total: Option<Var> = None;
        for (logits, targets) in domains {
            let p = self.irm_domain_penalty(*logits, targets)?;
            total = Some(match total {
                Some(t) => self.add(t, p)?,
                None => p,
            });
        }
        Ok(total.expect("at least two domains"))
    }
}
