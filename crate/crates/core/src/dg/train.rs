use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Element, Graph, Mode};
use crate::datasets::WindowDataset;
use crate::dg::batch::{gather, DomainSampler};
use crate::dg::config::{Algorithm, TrainerConfig};
use crate::dg::optim::Adam;
use crate::dg::step::{composite_train_step, StepRngs};
use crate::error::{Error, ErrorKind, Result};
use crate::models::{Checkpoint, Model};
use crate::seeds::SeedPlan;

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// Per-epoch losses, stored as CSV `epoch,train_loss,val_loss,lr`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    pub fn push(&mut self, record: EpochRecord) {
        self.records.push(record);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.records.is_empty() {
            w.write_record(["epoch", "train_loss", "val_loss", "lr"])
                .map_err(|e| Error::Data(e.to_string()))?;
        }
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(|e| Error::Data(format!("run log: {e}")))?;
        if headers != vec!["epoch", "train_loss", "val_loss", "lr"] {
            return Err(Error::Data(format!("run log: unexpected header {headers:?}")));
        }
        let records = r
            .deserialize()
            .collect::<std::result::Result<Vec<EpochRecord>, _>>()
            .map_err(|e| Error::Data(format!("run log: {e}")))?;
        Ok(RunLog { records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }
}

pub struct TrainOutcome<T> {
    pub log: RunLog,
    /// Weights with the lowest validation loss, plus optimizer moments.
    pub best: Checkpoint<T>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub steps: u64,
}

/// Mean task loss over `indices` in eval mode, in chunks of `batch_size`.
pub fn evaluate_loss<T: Element>(
    model: &mut Model<T>,
    data: &WindowDataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Data("no windows to evaluate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, targets) = gather::<T>(data, chunk)?;
        let mut g = Graph::new();
        let xv = g.constant(x);
        let out = model.forward(&mut g, xv, Mode::Eval, &mut rng)?;
        let loss = g.task_loss(out.logits, &targets)?;
        total += g.value(loss).item()?.to_f64_lossy() * chunk.len() as f64;
    }
    Ok(total / indices.len() as f64)
}

fn check_compatible<T: Element>(model: &Model<T>, data: &WindowDataset, cfg: &TrainerConfig) -> Result<()> {
    let mc = model.net.config();
    if mc.task != data.info.task {
        return Err(Error::Config(format!(
            "model task {:?} does not match dataset task {:?}",
            mc.task, data.info.task
        )));
    }
    if mc.num_classes != data.num_classes() {
        return Err(Error::Config(format!(
            "model has {} classes, dataset has {}",
            mc.num_classes,
            data.num_classes()
        )));
    }
    if mc.backbone.in_channels != data.info.channels {
        return Err(Error::Config(format!(
            "model expects {} channels, dataset has {}",
            mc.backbone.in_channels, data.info.channels
        )));
    }
    if cfg.algorithm == Algorithm::Biodg && !model.net.is_biodg() {
        return Err(Error::Config("biodg training needs a multi-tap model".into()));
    }
    Ok(())
}

/// Trains `model` on the windows in `train_idx` and keeps the weights of the
/// epoch with the lowest loss on `val_idx` (training loss when `val_idx` is
/// empty). The model is left at its final-epoch weights.
pub fn train_loop<T: Element>(
    model: &mut Model<T>,
    data: &WindowDataset,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainerConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.windows.is_empty() || train_idx.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    check_compatible(model, data, cfg)?;
    let schedule = cfg.schedule()?;
    let penalty = cfg.penalty();
    let batch_size = cfg.batch_size();

    let seeds = SeedPlan::derive(cfg.seed);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(seeds.data);
    sample_rng.set_stream(1);
    let mut step_rngs = StepRngs::from_plan(&seeds);

    let mut sampler = DomainSampler::new(data, train_idx, batch_size, &mut sample_rng)?;
    if penalty.algorithm.is_penalized() && sampler.n_domains() < 2 {
        return Err(Error::Config(format!(
            "{} needs at least two source domains, found {}",
            penalty.algorithm.as_str(),
            sampler.n_domains()
        )));
    }
    let steps = cfg
        .max_steps_per_epoch
        .map_or(sampler.steps_per_epoch(), |m| m.min(sampler.steps_per_epoch()));

    let mut optimizer = Adam::new(&model.params, cfg.weight_decay());
    let mut log = RunLog::default();
    let mut best: Option<(usize, f64, Checkpoint<T>)> = None;

    for epoch in 0..schedule.total_epochs {
        let lr = schedule.lr_at_epoch(epoch)?;
        let mut sum = 0.0;
        for step in 0..steps {
            let batch = sampler.next_batch::<T, _>(data, &mut sample_rng)?;
            let losses = composite_train_step(model, &batch, &penalty, &mut optimizer, lr, &mut step_rngs).map_err(
                |e| match e.kind() {
                    ErrorKind::Numerical => Error::Diverged {
                        epoch,
                        step,
                        source: Box::new(e),
                    },
                    _ => e,
                },
            )?;
            sum += losses.task;
        }
        let train_loss = sum / steps as f64;
        let val_loss = if val_idx.is_empty() {
            f64::NAN
        } else {
            evaluate_loss(model, data, val_idx, batch_size)?
        };
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        let score = if val_idx.is_empty() { train_loss } else { val_loss };
        if best.as_ref().is_none_or(|(_, b, _)| score < *b) {
            let mut ckpt = Checkpoint::from_model(model);
            for (name, t) in optimizer.state_tensors(&model.params) {
                ckpt.push(name, t);
            }
            ckpt.meta = serde_json::json!({
                "epoch": epoch,
                "optimizer_step": optimizer.step,
                "algorithm": cfg.algorithm.as_str(),
                "seed": cfg.seed,
            });
            best = Some((epoch, score, ckpt));
        }
    }
    let (best_epoch, best_val_loss, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        log,
        best,
        best_epoch,
        best_val_loss,
        steps: optimizer.step,
    })
}
