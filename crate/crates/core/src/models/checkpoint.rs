//! Checkpoint directory: `manifest.json` plus one BIT file per named tensor.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{DType, Element, Tensor};
use crate::datasets::bit::{read_bit_as, write_bit_tensor};
use crate::error::{Error, Result};
use crate::models::config::ModelConfig;
use crate::models::network::Model;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    dtype: DType,
    model: ModelConfig,
    /// Batch-norm layers whose running statistics have been populated.
    initialized_stats: Vec<String>,
    meta: serde_json::Value,
    tensors: Vec<ManifestEntry>,
}

/// Named tensors of a model (parameters, batch-norm buffers) and any extra
/// state such as optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: ModelConfig,
    pub tensors: Vec<(String, Tensor<T>)>,
    pub initialized_stats: Vec<String>,
    pub meta: serde_json::Value,
}

fn running_names(layer: &str) -> (String, String) {
    (format!("{layer}.running_mean"), format!("{layer}.running_var"))
}

impl<T: Element> Checkpoint<T> {
    pub fn from_model(model: &Model<T>) -> Self {
        let mut tensors: Vec<(String, Tensor<T>)> =
            model.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        let mut initialized_stats = Vec::new();
        for (state, layer) in model.net.bn_states().iter().zip(model.net.bn_names()) {
            let (mean, var) = running_names(layer);
            let c = state.channels();
            tensors.push((
                mean,
                Tensor::new(vec![c], state.running_mean.clone()).expect("length matches"),
            ));
            tensors.push((
                var,
                Tensor::new(vec![c], state.running_var.clone()).expect("length matches"),
            ));
            if state.initialized {
                initialized_stats.push(layer.clone());
            }
        }
        Checkpoint {
            model: model.net.config().clone(),
            tensors,
            initialized_stats,
            meta: serde_json::Value::Null,
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.tensors.push((name.into(), tensor));
    }

    /// Rebuilds the model, restoring every parameter and batch-norm buffer.
    pub fn to_model(&self) -> Result<Model<T>> {
        let mut model = Model::build(&self.model, &mut ChaCha8Rng::seed_from_u64(0))?;
        self.restore_into(&mut model)?;
        Ok(model)
    }

    pub fn restore_into(&self, model: &mut Model<T>) -> Result<()> {
        let missing = |name: &str| Error::Data(format!("checkpoint lacks tensor `{name}`"));
        for p in model.params.iter_mut() {
            let t = self.get(&p.name).ok_or_else(|| missing(&p.name))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Data(format!(
                    "checkpoint tensor `{}` has shape {:?}, model expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        let names = model.net.bn_names().to_vec();
        for (state, layer) in model.net.bn_states_mut().iter_mut().zip(&names) {
            let (mean, var) = running_names(layer);
            let m = self.get(&mean).ok_or_else(|| missing(&mean))?;
            let v = self.get(&var).ok_or_else(|| missing(&var))?;
            if m.numel() != state.channels() || v.numel() != state.channels() {
                return Err(Error::Data(format!("running statistics of `{layer}` have wrong size")));
            }
            state.running_mean = m.data().to_vec();
            state.running_var = v.data().to_vec();
            state.initialized = self.initialized_stats.contains(layer);
        }
        Ok(())
    }
}

pub fn save_checkpoint<T: Element>(dir: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut entries = Vec::with_capacity(ckpt.tensors.len());
    for (i, (name, tensor)) in ckpt.tensors.iter().enumerate() {
        let file = format!("t{i:05}.bit");
        write_bit_tensor(&dir.join(&file), tensor)?;
        entries.push(ManifestEntry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            file,
        });
    }
    let manifest = Manifest {
        dtype: T::DTYPE,
        model: ckpt.model.clone(),
        initialized_stats: ckpt.initialized_stats.clone(),
        meta: ckpt.meta.clone(),
        tensors: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Element type the checkpoint was saved with.
pub fn checkpoint_dtype(dir: &Path) -> Result<DType> {
    read_manifest(dir).map(|m| m.dtype)
}

pub fn load_checkpoint<T: Element>(dir: &Path) -> Result<Checkpoint<T>> {
    let manifest = read_manifest(dir)?;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in manifest.tensors {
        let tensor: Tensor<T> = read_bit_as(&dir.join(&entry.file))?;
        if tensor.shape() != entry.shape {
            return Err(Error::Data(format!(
                "tensor `{}` stored with shape {:?}, manifest says {:?}",
                entry.name,
                tensor.shape(),
                entry.shape
            )));
        }
        tensors.push((entry.name, tensor));
    }
    Ok(Checkpoint {
        model: manifest.model,
        tensors,
        initialized_stats: manifest.initialized_stats,
        meta: manifest.meta,
    })
}
