use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Independent seeds for each random consumer of a run, all derived from one
/// run-level seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    /// Split shuffling and batch sampling.
    pub data: u64,
    /// Weight initialization.
    pub init: u64,
    pub dropout: u64,
    /// RSC sample selection.
    pub rsc: u64,
}

impl SeedPlan {
    pub const NAMES: [&'static str; 4] = ["data", "init", "dropout", "rsc"];

    pub fn derive(seed: u64) -> Self {
        SeedPlan {
            data: sub_seed(seed, "data"),
            init: sub_seed(seed, "init"),
            dropout: sub_seed(seed, "dropout"),
            rsc: sub_seed(seed, "rsc"),
        }
    }

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }
}

/// Seed of the named consumer: the first word of the ChaCha stream keyed by
/// `seed` and numbered by `name`'s position in [`SeedPlan::NAMES`].
///
/// Panics on an unknown name.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    let stream = SeedPlan::NAMES
        .iter()
        .position(|n| *n == name)
        .unwrap_or_else(|| panic!("unknown sub-seed `{name}`"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64 + 1);
    rng.next_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_seeds_are_distinct_and_stable() {
        let a = SeedPlan::derive(7);
        assert_eq!(a, SeedPlan::derive(7));
        let all = [a.data, a.init, a.dropout, a.rsc];
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(all[i], all[j]);
            }
        }
        assert_ne!(a, SeedPlan::derive(8));
        assert_eq!(sub_seed(7, "rsc"), a.rsc);
    }

    #[test]
    #[should_panic(expected = "unknown sub-seed")]
    fn unknown_name_panics() {
        sub_seed(0, "shuffle");
    }
}
