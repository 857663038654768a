use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Element, Graph, Mode, ParamStore, Tensor, Var};
use crate::dg::batch::{BatchTargets, DomainBatch};
use crate::dg::config::{Algorithm, PenaltyConfig};
use crate::dg::optim::Adam;
use crate::dg::rsc::rsc_multipliers;
use crate::error::{Error, Result};
use crate::models::{Model, Network, Task};
use crate::seeds::SeedPlan;

impl<T: Element> Graph<T> {
    /// Mean multi-label BCE or softmax cross-entropy, per target kind.
    pub fn task_loss(&mut self, logits: Var, targets: &BatchTargets<T>) -> Result<Var> {
        match targets {
            BatchTargets::Classes(l) => self.softmax_cross_entropy_loss(logits, l),
            BatchTargets::MultiHot(y) => self.multilabel_bce_loss(logits, y),
        }
    }
}

fn check_task(task: Task, targets: &BatchTargets<impl Element>) -> Result<()> {
    if targets.task() != task {
        return Err(Error::Config(format!(
            "model is {task:?} but batch targets are {:?}",
            targets.task()
        )));
    }
    Ok(())
}

/// Random streams consumed by updates: dropout masks and RSC sample choice.
#[derive(Debug, Clone)]
pub struct StepRngs {
    pub dropout: ChaCha8Rng,
    pub rsc: ChaCha8Rng,
}

impl StepRngs {
    pub fn new(dropout_seed: u64, rsc_seed: u64) -> Self {
        StepRngs {
            dropout: ChaCha8Rng::seed_from_u64(dropout_seed),
            rsc: ChaCha8Rng::seed_from_u64(rsc_seed),
        }
    }

    pub fn from_plan(plan: &SeedPlan) -> Self {
        StepRngs::new(plan.dropout, plan.rsc)
    }
}

/// Task loss of the pooled batch, in train mode.
pub fn erm_loss<T: Element, R: Rng + ?Sized>(model: &mut Model<T>, batch: &DomainBatch<T>, rng: &mut R) -> Result<T> {
    let (x, targets) = batch.pooled()?;
    check_task(model.net.config().task, &targets)?;
    let mut g = Graph::new();
    let xv = g.constant(x);
    let out = model.forward(&mut g, xv, Mode::Train, rng)?;
    let loss = g.task_loss(out.logits, &targets)?;
    g.value(loss).item()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub task: f64,
    /// Unweighted penalty value; zero for algorithms without one.
    pub penalty: f64,
    pub total: f64,
}

/// Gradient of `Σ y ⊙ logits` with respect to the head input, which ranks
/// feature coordinates for muting.
fn rsc_feature_grads<T: Element>(
    net: &Network<T>,
    params: &ParamStore<T>,
    embedding: &Tensor<T>,
    targets: &BatchTargets<T>,
) -> Result<Vec<T>> {
    let mut g = Graph::new();
    let e = g.input(embedding.clone(), true);
    let logits = net.head(&mut g, params, e)?;
    let y = targets.indicator(net.num_classes());
    let s = g.weighted_sum(logits, y)?;
    g.gradients(s)?;
    Ok(g.grad(e)
        .map(<[T]>::to_vec)
        .unwrap_or_else(|| vec![T::zero(); embedding.numel()]))
}

fn penalty_term<T: Element>(
    g: &mut Graph<T>,
    cfg: &PenaltyConfig,
    batch: &DomainBatch<T>,
    embedding: Var,
    logits: Var,
) -> Result<Var> {
    let offsets = batch.offsets();
    match cfg.algorithm {
        Algorithm::Coral | Algorithm::Mmd => {
            let feats = offsets
                .iter()
                .map(|&(s, e)| g.slice_rows(embedding, s, e))
                .collect::<Result<Vec<_>>>()?;
            if cfg.algorithm == Algorithm::Coral {
                g.coral_penalty(&feats)
            } else {
                g.mmd_penalty(&feats, &cfg.mmd_bandwidth)
            }
        }
        Algorithm::Irm => {
            let domains = offsets
                .iter()
                .zip(&batch.parts)
                .map(|(&(s, e), part)| Ok((g.slice_rows(logits, s, e)?, part.targets.clone())))
                .collect::<Result<Vec<_>>>()?;
            g.irm_penalty(&domains)
        }
        _ => unreachable!("only penalized algorithms reach here"),
    }
}

/// One update: forward on the pooled batch, task loss plus the weighted
/// penalty (or gradient-guided muting for RSC), backward, one Adam step.
///
/// A zero penalty weight leaves the penalty out of the graph, so the update
/// is exactly the ERM update.
pub fn composite_train_step<T: Element>(
    model: &mut Model<T>,
    batch: &DomainBatch<T>,
    penalty: &PenaltyConfig,
    optimizer: &mut Adam<T>,
    lr: f64,
    rngs: &mut StepRngs,
) -> Result<StepLosses> {
    let (x, targets) = batch.pooled()?;
    check_task(model.net.config().task, &targets)?;
    if penalty.algorithm.is_penalized() && batch.parts.len() < 2 {
        return Err(Error::Config(format!(
            "{} needs at least two source domains per batch",
            penalty.algorithm.as_str()
        )));
    }
    let mut g = Graph::new();
    let xv = g.constant(x);
    let (embedding, _) = model
        .net
        .embed(&mut g, &model.params, xv, Mode::Train, &mut rngs.dropout)?;
    let head_input = if penalty.algorithm == Algorithm::Rsc {
        let shape = g.shape(embedding).to_vec();
        let grads = rsc_feature_grads(&model.net, &model.params, g.value(embedding), &targets)?;
        let mult = rsc_multipliers(
            &grads,
            shape[0],
            shape[1],
            penalty.rsc_feature_pct,
            penalty.rsc_batch_pct,
            &mut rngs.rsc,
        )?;
        g.mul_const(embedding, mult)?
    } else {
        embedding
    };
    let logits = model.net.head(&mut g, &model.params, head_input)?;
    let task = g.task_loss(logits, &targets)?;
    let lambda = penalty.lambda_at(optimizer.step);

    let mut penalty_value = 0.0;
    let total = if penalty.algorithm.is_penalized() && lambda > 0.0 {
        let p = penalty_term(&mut g, penalty, batch, embedding, logits)?;
        penalty_value = g.value(p).item()?.to_f64_lossy();
        let weighted = g.scale(p, T::from_f64_lossy(lambda))?;
        g.add(task, weighted)?
    } else {
        if penalty.algorithm.is_penalized() {
            // Reported only; built on detached copies so gradients are untouched.
            let mut scratch = Graph::new();
            let e = scratch.constant(g.value(embedding).clone());
            let l = scratch.constant(g.value(logits).clone());
            let p = penalty_term(&mut scratch, penalty, batch, e, l)?;
            penalty_value = scratch.value(p).item()?.to_f64_lossy();
        }
        task
    };
    let task_value = g.value(task).item()?.to_f64_lossy();
    let total_value = g.value(total).item()?.to_f64_lossy();

    model.params.zero_grads();
    g.backward(total, &mut model.params)?;
    drop(g);
    optimizer.update(&mut model.params, lr)?;
    if let Some(p) = model.params.iter().find(|p| !p.value.is_finite()) {
        return Err(Error::NonFiniteParam { name: p.name.clone() });
    }
    Ok(StepLosses {
        task: task_value,
        penalty: penalty_value,
        total: total_value,
    })
}
