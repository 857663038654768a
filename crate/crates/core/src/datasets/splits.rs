use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ECG_SOURCES: [&str; 3] = ["cpsc", "ptb", "ptb-xl"];
pub const ECG_TARGETS: [&str; 2] = ["g12ec", "incart"];
pub const EEG_DOMAINS: [&str; 3] = ["CHI", "FRA", "GER"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assignment {
    Train,
    Val,
    Test,
    Ood,
}

impl Assignment {
    pub fn as_str(self) -> &'static str {
        match self {
            Assignment::Train => "train",
            Assignment::Val => "val",
            Assignment::Test => "test",
            Assignment::Ood => "ood",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Assignment::Train),
            "val" => Some(Assignment::Val),
            "test" => Some(Assignment::Test),
            "ood" => Some(Assignment::Ood),
            _ => None,
        }
    }
}

/// Recording-level assignment of every example to train/val/test/ood.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub assignments: BTreeMap<String, Assignment>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn get(&self, recording: &str) -> Option<Assignment> {
        self.assignments.get(recording).copied()
    }

    pub fn count(&self, a: Assignment) -> usize {
        self.assignments.values().filter(|&&v| v == a).count()
    }
}

/// Train/val/test sizes for `n` recordings: `round(0.7n)`, `round(0.1n)`, rest.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = (0.7 * n as f64).round() as usize;
    let val = ((0.1 * n as f64).round() as usize).min(n - train);
    (train, val, n - train - val)
}

fn domain_rng(seed: u64, domain: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // FNV-1a keeps streams stable across platforms and runs.
    let hash = domain.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    });
    rng.set_stream(hash);
    rng
}

/// Splits each source domain 70/10/20 at recording level and marks every
/// target-domain recording as out-of-distribution.
///
/// `recordings` holds `(recording id, domain)` pairs; ids must be unique.
pub fn make_split(recordings: &[(String, String)], sources: &[&str], targets: &[&str], seed: u64) -> Result<SplitPlan> {
    let mut by_domain: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (id, domain) in recordings {
        if !sources.contains(&domain.as_str()) && !targets.contains(&domain.as_str()) {
            return Err(Error::Data(format!("recording `{id}` has unknown domain `{domain}`")));
        }
        if !seen.insert(id.as_str()) {
            return Err(Error::Data(format!("duplicate recording id `{id}`")));
        }
        by_domain.entry(domain.as_str()).or_default().push(id.as_str());
    }
    let mut assignments = BTreeMap::new();
    for (domain, mut ids) in by_domain {
        if targets.contains(&domain) {
            for id in ids {
                assignments.insert(id.to_string(), Assignment::Ood);
            }
            continue;
        }
        ids.sort_unstable();
        ids.shuffle(&mut domain_rng(seed, domain));
        let (train, val, _) = split_counts(ids.len());
        for (i, id) in ids.into_iter().enumerate() {
            let a = if i < train {
                Assignment::Train
            } else if i < train + val {
                Assignment::Val
            } else {
                Assignment::Test
            };
            assignments.insert(id.to_string(), a);
        }
    }
    Ok(SplitPlan {
        sources: sources.iter().map(|s| s.to_string()).collect(),
        targets: targets.iter().map(|s| s.to_string()).collect(),
        assignments,
        seed,
    })
}

/// Fixed ECG protocol: CPSC (both sets), PTB and PTB-XL are sources;
/// INCART and G12EC are held out.
pub fn make_ecg_split(recordings: &[(String, String)], seed: u64) -> Result<SplitPlan> {
    make_split(recordings, &ECG_SOURCES, &ECG_TARGETS, seed)
}

/// One plan per domain, each holding that domain out and splitting the rest.
pub fn make_lodo_plans(recordings: &[(String, String)], domains: &[&str], seed: u64) -> Result<Vec<SplitPlan>> {
    if domains.len() < 2 {
        return Err(Error::Data("leave-one-domain-out needs at least two domains".into()));
    }
    domains
        .iter()
        .map(|&target| {
            let sources: Vec<&str> = domains.iter().copied().filter(|&d| d != target).collect();
            make_split(recordings, &sources, &[target], seed)
        })
        .collect()
}

/// The three EEG iterations over CHI, FRA and GER.
pub fn make_lodo_iterations(recordings: &[(String, String)], seed: u64) -> Result<Vec<SplitPlan>> {
    let present: BTreeSet<&str> = recordings.iter().map(|(_, d)| d.as_str()).collect();
    let expected: BTreeSet<&str> = EEG_DOMAINS.into_iter().collect();
    if present != expected {
        return Err(Error::Data(format!(
            "EEG protocol needs exactly the domains {EEG_DOMAINS:?}, found {present:?}"
        )));
    }
    make_lodo_plans(recordings, &EEG_DOMAINS, seed)
}
