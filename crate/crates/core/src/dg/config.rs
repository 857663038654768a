use serde::{Deserialize, Serialize};

use crate::dg::optim::LrSchedule;
use crate::dg::penalties::Bandwidth;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Erm,
    Irm,
    Coral,
    Mmd,
    Rsc,
    /// Task loss only, on a multi-tap concentration assembly.
    Biodg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Erm,
        Algorithm::Irm,
        Algorithm::Coral,
        Algorithm::Mmd,
        Algorithm::Rsc,
        Algorithm::Biodg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Erm => "erm",
            Algorithm::Irm => "irm",
            Algorithm::Coral => "coral",
            Algorithm::Mmd => "mmd",
            Algorithm::Rsc => "rsc",
            Algorithm::Biodg => "biodg",
        }
    }

    /// Whether the algorithm adds a cross-domain penalty to the task loss.
    pub fn is_penalized(self) -> bool {
        matches!(self, Algorithm::Irm | Algorithm::Coral | Algorithm::Mmd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    pub algorithm: Algorithm,
    pub lambda: f64,
    pub irm_anneal_steps: u64,
    pub rsc_feature_pct: f64,
    pub rsc_batch_pct: f64,
    pub mmd_bandwidth: Bandwidth,
}

impl PenaltyConfig {
    /// Stock hyperparameters: IRM λ=100 after a 500-step anneal, CORAL and
    /// MMD λ=1, RSC muting 33.3% of features on 33.3% of samples.
    pub fn defaults(algorithm: Algorithm) -> Self {
        PenaltyConfig {
            algorithm,
            lambda: match algorithm {
                Algorithm::Irm => 100.0,
                Algorithm::Coral | Algorithm::Mmd => 1.0,
                _ => 0.0,
            },
            irm_anneal_steps: 500,
            rsc_feature_pct: 33.3,
            rsc_batch_pct: 33.3,
            mmd_bandwidth: Bandwidth::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be >= 0", self.lambda)));
        }
        for (name, v) in [
            ("rsc_feature_pct", self.rsc_feature_pct),
            ("rsc_batch_pct", self.rsc_batch_pct),
        ] {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 100]")));
            }
        }
        self.mmd_bandwidth.validate()
    }

    /// Penalty weight for the update that follows `steps_done` updates.
    ///
    /// IRM runs at `min(λ, 1)` during the anneal phase so that `λ = 0`
    /// still switches the penalty off entirely.
    pub fn lambda_at(&self, steps_done: u64) -> f64 {
        match self.algorithm {
            Algorithm::Irm if steps_done < self.irm_anneal_steps => self.lambda.min(1.0),
            a if a.is_penalized() => self.lambda,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Ecg,
    Eeg,
}

/// Optimizer and schedule settings of one preset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PresetValues {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub decay_epoch: usize,
    pub epochs: usize,
}

impl Preset {
    pub fn values(self) -> PresetValues {
        match self {
            Preset::Ecg => PresetValues {
                lr: 1e-3,
                weight_decay: 5e-4,
                batch_size: 128,
                decay_epoch: 24,
                epochs: 30,
            },
            Preset::Eeg => PresetValues {
                lr: 9e-5,
                weight_decay: 5e-5,
                batch_size: 64,
                decay_epoch: 14,
                epochs: 20,
            },
        }
    }

    pub fn schedule(self) -> LrSchedule {
        let v = self.values();
        LrSchedule {
            base_lr: v.lr,
            decay_epoch: v.decay_epoch,
            decay_factor: 0.1,
            total_epochs: v.epochs,
        }
    }
}

/// Optional penalty overrides; unset fields take the algorithm's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyOverrides {
    pub lambda: Option<f64>,
    pub irm_anneal_steps: Option<u64>,
    pub rsc_feature_pct: Option<f64>,
    pub rsc_batch_pct: Option<f64>,
    pub mmd_bandwidth: Option<Bandwidth>,
}

/// Training run settings: a preset plus field-level overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub algorithm: Algorithm,
    pub preset: Preset,
    #[serde(default)]
    pub seed: u64,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub decay_epoch: Option<usize>,
    /// Caps the number of updates per epoch.
    pub max_steps_per_epoch: Option<usize>,
    #[serde(default)]
    pub penalty: PenaltyOverrides,
}

impl TrainerConfig {
    pub fn new(algorithm: Algorithm, preset: Preset, seed: u64) -> Self {
        TrainerConfig {
            algorithm,
            preset,
            seed,
            epochs: None,
            batch_size: None,
            lr: None,
            weight_decay: None,
            decay_epoch: None,
            max_steps_per_epoch: None,
            penalty: PenaltyOverrides::default(),
        }
    }

    pub fn schedule(&self) -> Result<LrSchedule> {
        let base = self.preset.values();
        let epochs = self.epochs.unwrap_or(base.epochs);
        // Shortened runs keep the decay at the same fraction of training.
        let decay = self.decay_epoch.unwrap_or_else(|| {
            if epochs == base.epochs {
                base.decay_epoch
            } else {
                ((base.decay_epoch * epochs) as f64 / base.epochs as f64)
                    .round()
                    .max(1.0) as usize
            }
        });
        let s = LrSchedule {
            base_lr: self.lr.unwrap_or(base.lr),
            decay_epoch: decay.min(epochs.max(1)),
            decay_factor: 0.1,
            total_epochs: epochs,
        };
        if epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        s.validate()?;
        Ok(s)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(self.preset.values().batch_size)
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay.unwrap_or(self.preset.values().weight_decay)
    }

    pub fn penalty(&self) -> PenaltyConfig {
        let mut p = PenaltyConfig::defaults(self.algorithm);
        let o = &self.penalty;
        if let Some(v) = o.lambda {
            p.lambda = v;
        }
        if let Some(v) = o.irm_anneal_steps {
            p.irm_anneal_steps = v;
        }
        if let Some(v) = o.rsc_feature_pct {
            p.rsc_feature_pct = v;
        }
        if let Some(v) = o.rsc_batch_pct {
            p.rsc_batch_pct = v;
        }
        if let Some(v) = &o.mmd_bandwidth {
            p.mmd_bandwidth = v.clone();
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule()?;
        if self.batch_size() < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if !(self.weight_decay() >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.max_steps_per_epoch == Some(0) {
            return Err(Error::Config("max_steps_per_epoch must be >= 1".into()));
        }
        self.penalty().validate()
    }
}
