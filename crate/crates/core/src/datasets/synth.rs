//! Multi-domain synthetic windows: a class-coded sinusoidal burst under
//! domain-specific nuisances.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::datasets::windows::{DatasetInfo, Target, Window, WindowDataset};
use crate::error::{Error, Result};
use crate::models::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_domains: usize,
    pub per_domain: usize,
    pub classes: usize,
    pub channels: usize,
    pub length: usize,
    pub fs_hz: f64,
    pub shift_strength: f64,
    /// Innovation standard deviation of the background noise.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_domains: 3,
            per_domain: 200,
            classes: 4,
            channels: 4,
            length: 256,
            fs_hz: 128.0,
            shift_strength: 1.0,
            noise_std: 0.5,
            seed: 0,
        }
    }
}

/// Burst frequency of class `c`, in Hz.
pub fn class_frequency(c: usize) -> f64 {
    4.0 + 3.0 * c as f64
}

const WANDER_HZ: f64 = 0.5;

/// Nuisance parameters of one domain, already scaled by shift strength.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainNuisance {
    pub wander_amplitude: f64,
    /// AR(1) coefficient of the background noise: positive tilts power to low
    /// frequencies, negative to high.
    pub noise_tilt: f64,
    pub channel_gain: Vec<f64>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_domains < 2 {
            return Err(Error::Config("synthetic data needs n_domains >= 2".into()));
        }
        if self.per_domain == 0 || self.classes < 2 || self.channels == 0 || self.length < 8 {
            return Err(Error::Config(
                "synthetic data needs per_domain >= 1, classes >= 2, channels >= 1, length >= 8".into(),
            ));
        }
        if !(self.shift_strength >= 0.0 && self.shift_strength.is_finite()) {
            return Err(Error::Config(format!(
                "shift_strength {} must be >= 0",
                self.shift_strength
            )));
        }
        if !(self.noise_std >= 0.0 && self.fs_hz > 0.0) {
            return Err(Error::Config("noise_std must be >= 0 and fs_hz > 0".into()));
        }
        if class_frequency(self.classes - 1) >= self.fs_hz / 2.0 {
            return Err(Error::Config(format!(
                "{} classes need burst frequencies above Nyquist at {} Hz",
                self.classes, self.fs_hz
            )));
        }
        Ok(())
    }

    /// Draws per-domain nuisances. Tilts are stratified so domains spread over
    /// the whole range instead of clustering.
    pub fn nuisances(&self) -> Vec<DomainNuisance> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let s = self.shift_strength;
        (0..self.n_domains)
            .map(|d| {
                let u: f64 = rng.random();
                let tilt = 2.0 * (d as f64 + u) / self.n_domains as f64 - 1.0;
                let wander: f64 = rng.random_range(0.2..1.0);
                let channel_gain = (0..self.channels)
                    .map(|_| (s * 0.3 * rng.random_range(-1.0..1.0f64)).exp())
                    .collect();
                DomainNuisance {
                    wander_amplitude: s * wander,
                    noise_tilt: (s * 0.3 * tilt).clamp(-0.95, 0.95),
                    channel_gain,
                }
            })
            .collect()
    }
}

fn window(cfg: &SynthConfig, nuisance: &DomainNuisance, class: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let (l, fs) = (cfg.length, cfg.fs_hz);
    let freq = class_frequency(class);
    let center = rng.random_range(0.3..0.7) * l as f64;
    let width = l as f64 / 8.0;
    let phase = rng.random_range(0.0..2.0 * PI);
    let wander_phase = rng.random_range(0.0..2.0 * PI);
    let burst: Vec<f64> = (0..l)
        .map(|t| {
            let env = (-0.5 * ((t as f64 - center) / width).powi(2)).exp();
            env * (2.0 * PI * freq * t as f64 / fs + phase).sin()
        })
        .collect();
    let normal = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let a = nuisance.noise_tilt;
    let mut out = Vec::with_capacity(cfg.channels * l);
    for gain in &nuisance.channel_gain {
        // Start the AR recursion at its stationary variance.
        let mut noise = normal.sample(rng) / (1.0 - a * a).sqrt();
        for (t, b) in burst.iter().enumerate() {
            if t > 0 {
                noise = a * noise + normal.sample(rng);
            }
            let n = if cfg.noise_std > 0.0 { noise } else { 0.0 };
            let wander = nuisance.wander_amplitude * (2.0 * PI * WANDER_HZ * t as f64 / fs + wander_phase).sin();
            out.push((gain * (b + n + wander)) as f32);
        }
    }
    out
}

/// Generates `per_domain` windows per domain, class-balanced, fully
/// determined by the config. Domains are named `d0`, `d1`, ...; each window
/// is its own recording.
pub fn synth_domain_dataset(cfg: &SynthConfig) -> Result<WindowDataset> {
    cfg.validate()?;
    let nuisances = cfg.nuisances();
    let mut windows = Vec::with_capacity(cfg.n_domains * cfg.per_domain);
    for (d, nuisance) in nuisances.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(2 + d as u64);
        for i in 0..cfg.per_domain {
            let class = i % cfg.classes;
            let data = window(cfg, nuisance, class, &mut rng);
            let id = format!("d{d}_w{i:05}");
            windows.push(Window {
                recording: id.clone(),
                id,
                domain: format!("d{d}"),
                data: Tensor::new(vec![cfg.channels, cfg.length], data)?,
                target: Target::Class(class),
                split: None,
            });
        }
    }
    Ok(WindowDataset {
        info: DatasetInfo {
            task: Task::Multiclass,
            class_names: (0..cfg.classes).map(|c| format!("{} Hz", class_frequency(c))).collect(),
            channels: cfg.channels,
            length: cfg.length,
            domains: (0..cfg.n_domains).map(|d| format!("d{d}")).collect(),
        },
        windows,
    })
}

/// Oracle classifier: picks the class whose burst frequency carries the most
/// spectral power, summed over channels.
pub fn matched_filter_class(window: &Tensor<f32>, classes: usize, fs_hz: f64) -> usize {
    let [channels, len] = [window.dim(0), window.dim(1)];
    let x = window.data();
    let power = |c: usize| -> f64 {
        let f = class_frequency(c);
        (0..channels)
            .map(|ch| {
                let row = &x[ch * len..(ch + 1) * len];
                let mean = row.iter().map(|&v| v as f64).sum::<f64>() / len as f64;
                let (mut re, mut im) = (0.0, 0.0);
                for (t, &v) in row.iter().enumerate() {
                    let w = 2.0 * PI * f * t as f64 / fs_hz;
                    re += (v as f64 - mean) * w.cos();
                    im += (v as f64 - mean) * w.sin();
                }
                re * re + im * im
            })
            .sum()
    };
    (0..classes)
        .map(|c| (c, power(c)))
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (c, p)| if p > best.1 { (c, p) } else { best },
        )
        .0
}
