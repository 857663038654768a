//! Central finite-difference oracle for recorded gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|g_ad − g_fd| / max(1e−12, |g_ad| + |g_fd|)`.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric gradient at the worst coordinate.
    pub worst_values: (f64, f64),
    pub checked: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates sampled per parameter; `None` checks every coordinate.
    pub coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-3,
            coords_per_param: None,
            seed: 0,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

fn evaluate<F>(store: &ParamStore<f64>, f: &mut F) -> Result<f64>
where
    F: FnMut(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut graph = Graph::new();
    let loss = f(&mut graph, store)?;
    let value = graph.value(loss).item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            op: "finite_difference_check",
            node: loss.index(),
        });
    }
    Ok(value)
}

/// Compares the tape's gradients of the scalar program `f` against central
/// differences `(f(θ+h) − f(θ−h)) / 2h`, coordinate by coordinate.
///
/// Parameter gradients in `store` are left holding the analytic gradient.
pub fn finite_difference_check<F>(
    store: &mut ParamStore<f64>,
    mut f: F,
    options: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    store.zero_grads();
    let mut graph = Graph::new();
    let loss = f(&mut graph, store)?;
    graph.backward(loss, store)?;
    drop(graph);

    let h = options.step;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let numel = store.get(id).value.numel();
        let coords: Vec<usize> = match options.coords_per_param {
            Some(k) if k < numel => {
                let mut picked = sample(&mut rng, numel, k).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..numel).collect(),
        };
        for i in coords {
            let analytic = store.get(id).grad.data()[i];
            let original = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = original + h;
            let plus = evaluate(store, &mut f);
            store.get_mut(id).value.data_mut()[i] = original - h;
            let minus = evaluate(store, &mut f);
            store.get_mut(id).value.data_mut()[i] = original;
            let numeric = (plus? - minus?) / (2.0 * h);
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), i));
                report.worst_values = (analytic, numeric);
            }
        }
    }
    Ok(report)
}
