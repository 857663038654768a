//! Run configuration: one TOML document, merged over defaults, with dotted
//! `key=value` overrides applied last.

use std::path::Path;

use dgbench_core::autodiff::DType;
use dgbench_core::datasets::SynthConfig;
use dgbench_core::dg::{Algorithm, Preset, TrainerConfig};
use dgbench_core::eval::DEFAULT_THRESHOLD;
use dgbench_core::models::{BackboneKind, ModelSpec, Task};
use dgbench_core::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const RESOLVED_FILE: &str = "config.resolved.toml";

/// Which recordings train and which are held out.
///
/// With no targets, the assignments stored in the dataset are used as is.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Source domains; empty means every domain that is not a target.
    pub sources: Vec<String>,
    pub targets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Sigmoid cut-off for multi-label predictions.
    pub threshold: f64,
    /// Also export head-input vectors of the evaluated windows.
    pub embeddings: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// One plan from the `split` section.
    Fixed,
    /// Every domain held out once.
    Lodo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub protocol: Protocol,
    pub repeats: usize,
    /// Domains rotated through by `lodo`; empty means all of the dataset's.
    pub domains: Vec<String>,
    pub save_checkpoints: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexityConfig {
    /// `[channels, length]` of one input window.
    pub input_shape: [usize; 2],
    pub classes: usize,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Element type for training and evaluation.
    pub dtype: DType,
    pub split: SplitConfig,
    pub model: ModelSpec,
    pub trainer: TrainerConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
    pub benchmark: BenchmarkConfig,
    pub complexity: ComplexityConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            dtype: DType::F32,
            split: SplitConfig::default(),
            model: ModelSpec {
                backbone: BackboneKind::Sresnet,
                stem_channels: None,
                widths: None,
                biodg: None,
            },
            trainer: TrainerConfig::new(Algorithm::Erm, Preset::Ecg, 0),
            eval: EvalConfig {
                threshold: DEFAULT_THRESHOLD,
                embeddings: false,
            },
            synth: SynthConfig::default(),
            benchmark: BenchmarkConfig {
                protocol: Protocol::Lodo,
                repeats: 10,
                domains: Vec::new(),
                save_checkpoints: false,
            },
            complexity: ComplexityConfig {
                input_shape: [12, 5000],
                classes: 24,
                task: Task::Multilabel,
            },
        }
    }
}

/// Keys whose value always comes from the top-level `seed`.
const DERIVED_SEEDS: [&str; 2] = ["trainer.seed", "synth.seed"];

fn config_err(what: impl std::fmt::Display) -> Error {
    Error::Config(what.to_string())
}

fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn has_key(table: &Table, dotted: &str) -> bool {
    let mut cur = table;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        match cur.get(*p) {
            Some(Value::Table(t)) if i + 1 < parts.len() => cur = t,
            Some(_) if i + 1 == parts.len() => return true,
            _ => return false,
        }
    }
    false
}

/// Parses `a.b.c=value`. The value is read as a TOML value when it parses as
/// one and as a bare string otherwise.
pub fn parse_override(text: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{text}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(config_err(format!("override `{text}` has an empty key")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((key.split('.').map(str::to_string).collect(), value))
}

fn apply_override(table: &mut Table, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty key");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(config_err(format!("`{}` is not a section", path.join(".")))),
        };
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Defaults, then the file (if any), then each override in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut user = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
                text.parse::<Table>()
                    .map_err(|e| config_err(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for o in overrides {
            let (key, value) = parse_override(o)?;
            apply_override(&mut user, &key, value)?;
        }
        if let Some(k) = DERIVED_SEEDS.iter().find(|k| has_key(&user, k)) {
            return Err(config_err(format!(
                "`{k}` is derived from the top-level `seed`; set that instead"
            )));
        }
        let mut table = Table::try_from(RunConfig::default()).map_err(config_err)?;
        merge(&mut table, user);
        let cfg: RunConfig = Value::Table(table).try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut trainer = self.trainer.clone();
        trainer.seed = self.seed;
        trainer.validate()?;
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(config_err(format!(
                "eval.threshold {} outside [0, 1]",
                self.eval.threshold
            )));
        }
        if self.benchmark.repeats == 0 {
            return Err(config_err("benchmark.repeats must be >= 1"));
        }
        if self.trainer.algorithm == Algorithm::Biodg && self.model.biodg.is_none() {
            return Err(config_err("algorithm `biodg` needs a [model.biodg] section"));
        }
        Ok(())
    }

    /// Trainer settings for one run seeded with `seed`.
    pub fn trainer_for(&self, seed: u64) -> TrainerConfig {
        let mut t = self.trainer.clone();
        t.seed = seed;
        t
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the fully resolved configuration next to a command's outputs.
    pub fn write_snapshot(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join(RESOLVED_FILE);
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}
