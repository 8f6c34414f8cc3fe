use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.7, 0.2, 0.1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Self::Train),
            "val" | "valid" | "validation" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            _ => Err(Error::config(format!("unknown split `{s}`"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub sample_path: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub entries: Vec<SplitEntry>,
    pub seed: u64,
    pub ratios: (f64, f64, f64),
}

impl SplitManifest {
    pub fn paths(&self, split: Split) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(move |e| e.split == split)
            .map(|e| e.sample_path.as_str())
    }

    /// `(train, val, test)` sizes.
    pub fn counts(&self) -> (usize, usize, usize) {
        let n = |s| self.entries.iter().filter(|e| e.split == s).count();
        (n(Split::Train), n(Split::Val), n(Split::Test))
    }
}

/// Floor allocation for val and test, remainder to train.
pub fn split_counts(n: usize, ratios: (f64, f64, f64)) -> (usize, usize, usize) {
    // the small guard keeps exact products like 9475 * 0.2 from flooring down
    let alloc = |r: f64| (n as f64 * r + 1e-9).floor() as usize;
    let (val, test) = (alloc(ratios.1), alloc(ratios.2));
    (n - val - test, val, test)
}

/// Seeded shuffle of the sorted paths, then contiguous train/val/test slices.
pub fn split_dataset<S: AsRef<str>>(entries: &[S], ratios: (f64, f64, f64), seed: u64) -> Result<SplitManifest> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || ((a + b + c) - 1.0).abs() > 1e-6 {
        return Err(Error::config(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    if entries.len() < 10 {
        return Err(Error::config(format!("need at least 10 entries to split, got {}", entries.len())));
    }
    let mut paths: Vec<String> = entries.iter().map(|s| s.as_ref().to_string()).collect();
    paths.sort();
    paths.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_val, _) = split_counts(paths.len(), ratios);
    let entries = paths
        .into_iter()
        .enumerate()
        .map(|(i, sample_path)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            SplitEntry { sample_path, split }
        })
        .collect();
    Ok(SplitManifest { entries, seed, ratios })
}
