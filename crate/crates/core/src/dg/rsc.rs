//! Gradient-guided feature muting.

use rand::seq::index::sample;
use rand::Rng;

use crate::autodiff::{Element, Tensor};
use crate::error::{Error, Result};

fn check_pct(name: &str, v: f64) -> Result<()> {
    if (0.0..=100.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} {v} outside [0, 100]")))
    }
}

/// Per-coordinate multipliers for `[N, D]` features: a random
/// `⌊batch_pct·N/100⌋` of the samples lose their `⌊feature_pct·D/100⌋`
/// largest-|gradient| coordinates (ties to the lower index), and their
/// survivors are rescaled by `D / (D − dropped)`. Other samples get 1.
pub fn rsc_multipliers<T: Element, R: Rng + ?Sized>(
    grads: &[T],
    n: usize,
    d: usize,
    feature_pct: f64,
    batch_pct: f64,
    rng: &mut R,
) -> Result<Vec<T>> {
    check_pct("rsc feature_pct", feature_pct)?;
    check_pct("rsc batch_pct", batch_pct)?;
    if grads.len() != n * d {
        return Err(Error::shape(
            "rsc_mask",
            format!("{} gradients for [{n}, {d}]", grads.len()),
        ));
    }
    let mut mult = vec![T::one(); n * d];
    let dropped = (feature_pct * d as f64 / 100.0).floor() as usize;
    let chosen = (batch_pct * n as f64 / 100.0).floor() as usize;
    if dropped == 0 || chosen == 0 {
        return Ok(mult);
    }
    let survivors = if dropped < d {
        T::from_usize(d).unwrap() / T::from_usize(d - dropped).unwrap()
    } else {
        T::zero()
    };
    let mut order: Vec<usize> = Vec::with_capacity(d);
    for s in sample(rng, n, chosen) {
        let row = &grads[s * d..(s + 1) * d];
        order.clear();
        order.extend(0..d);
        // Stable sort keeps the lower index first among equal magnitudes.
        order.sort_by(|&a, &b| row[b].abs().partial_cmp(&row[a].abs()).expect("finite gradients"));
        let out = &mut mult[s * d..(s + 1) * d];
        out.fill(survivors);
        for &k in &order[..dropped.min(d)] {
            out[k] = T::zero();
        }
    }
    Ok(mult)
}

/// Applies [`rsc_multipliers`] to a `[N, D]` feature tensor.
pub fn rsc_mask<T: Element, R: Rng + ?Sized>(
    features: &Tensor<T>,
    grads: &Tensor<T>,
    feature_pct: f64,
    batch_pct: f64,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let [n, d] = features.shape()[..] else {
        return Err(Error::shape(
            "rsc_mask",
            format!("features must be [N, D], got {:?}", features.shape()),
        ));
    };
    if grads.shape() != features.shape() {
        return Err(Error::shape("rsc_mask", "gradient shape differs from features"));
    }
    let mult = rsc_multipliers(grads.data(), n, d, feature_pct, batch_pct, rng)?;
    let data = features.data().iter().zip(&mult).map(|(&x, &m)| x * m).collect();
    Tensor::new(vec![n, d], data)
}
