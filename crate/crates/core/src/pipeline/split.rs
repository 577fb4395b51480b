use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::chem::{murcko_scaffold, Molecule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    /// `(train, valid, test)` counts: floors for train and valid, the rest to test.
    pub fn targets(&self, n: usize) -> (usize, usize, usize) {
        let train = (self.train * n as f64 + 1e-9).floor() as usize;
        let valid = ((self.valid * n as f64 + 1e-9).floor() as usize).min(n - train);
        (train, valid, n - train - valid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub tags: Vec<Partition>,
    pub ratios: SplitRatios,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn indices(&self, part: Partition) -> Vec<usize> {
        (0..self.tags.len()).filter(|&i| self.tags[i] == part).collect()
    }

    pub fn count(&self, part: Partition) -> usize {
        self.tags.iter().filter(|&&t| t == part).count()
    }
}

/// Group by scaffold key and assign whole bins.
///
/// Bins larger than half the test target are placed first, the rest after
/// them; both groups are shuffled by `seed`. Each bin goes to the first of
/// train, valid, test that still has room for all of it, and to train when
/// none has.
pub fn scaffold_split(keys: &[String], ratios: SplitRatios, seed: u64) -> Result<SplitAssignment, PipelineError> {
    let n = keys.len();
    if n < 10 {
        return Err(PipelineError::Split(format!("need at least 10 molecules, got {n}")));
    }
    let sum = ratios.train + ratios.valid + ratios.test;
    if [ratios.train, ratios.valid, ratios.test].iter().any(|r| *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(PipelineError::Split(format!("ratios must be non-negative and sum to 1, got {ratios:?}")));
    }
    let mut bins: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        bins.entry(k.as_str()).or_default().push(i);
    }
    let (train_t, valid_t, test_t) = ratios.targets(n);
    let (mut big, mut small): (Vec<Vec<usize>>, Vec<Vec<usize>>) =
        bins.into_values().partition(|b| b.len() as f64 > test_t as f64 / 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    big.shuffle(&mut rng);
    small.shuffle(&mut rng);
    let mut tags = vec![Partition::Train; n];
    let (mut train, mut valid, mut test) = (0, 0, 0);
    for bin in big.into_iter().chain(small) {
        let len = bin.len();
        let part = if train + len <= train_t {
            train += len;
            Partition::Train
        } else if valid + len <= valid_t {
            valid += len;
            Partition::Valid
        } else if test + len <= test_t {
            test += len;
            Partition::Test
        } else {
            train += len;
            Partition::Train
        };
        for i in bin {
            tags[i] = part;
        }
    }
    if valid == 0 || test == 0 {
        log::warn!("scaffold split left an empty partition: train {train}, valid {valid}, test {test}");
    }
    Ok(SplitAssignment { tags, ratios, seed })
}

pub fn scaffold_keys(mols: &[Molecule]) -> Vec<String> {
    mols.iter().map(|m| murcko_scaffold(m).canonical_key).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_bins() {
        let keys: Vec<String> = (0..10).map(|i| format!("k{i}")).collect();
        let s = scaffold_split(&keys, SplitRatios::default(), 0).unwrap();
        assert_eq!((s.count(Partition::Train), s.count(Partition::Valid), s.count(Partition::Test)), (8, 1, 1));
        assert_eq!(s, scaffold_split(&keys, SplitRatios::default(), 0).unwrap());
    }

    #[test]
    fn one_scaffold_goes_to_train() {
        let keys = vec!["ring".to_string(); 25];
        let s = scaffold_split(&keys, SplitRatios::default(), 3).unwrap();
        assert_eq!(s.count(Partition::Train), 25);
    }

    #[test]
    fn too_small() {
        let keys = vec!["a".to_string(); 9];
        assert!(scaffold_split(&keys, SplitRatios::default(), 0).is_err());
    }

    #[test]
    fn bins_stay_together() {
        let keys: Vec<String> = (0..60).map(|i| format!("k{}", (i * 7) % 13)).collect();
        let s = scaffold_split(&keys, SplitRatios::default(), 11).unwrap();
        for i in 0..60 {
            for j in 0..60 {
                if keys[i] == keys[j] {
                    assert_eq!(s.tags[i], s.tags[j]);
                }
            }
        }
    }
}
