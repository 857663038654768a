mod batch;
mod config;
mod optim;
mod penalties;
mod rsc;
mod step;
mod train;


pub use batch::{concat_rows, gather, BatchTargets, DomainBatch, DomainSampler, SubBatch};
pub use config::{Algorithm, PenaltyConfig, PenaltyOverrides, Preset, PresetValues, TrainerConfig};
pub use optim::{Adam, LrSchedule};
pub use penalties::{irm_scale_gradient, Bandwidth};
pub use rsc::{rsc_mask, rsc_multipliers};
pub use step::{composite_train_step, erm_loss, StepLosses, StepRngs};
pub use train::{evaluate_loss, train_loop, EpochRecord, RunLog, TrainOutcome};
