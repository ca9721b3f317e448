use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MilError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
}

/// `k` train/validation splits over a pool of bags, plus one fixed test set
/// disjoint from all of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSet {
    pub k: usize,
    pub splits: Vec<Split>,
    pub test: Vec<String>,
}

/// Takes `round(fraction·n)` of each class, after a shuffle.
fn stratified_take(
    ids: &[(String, u8)],
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<String>, Vec<String>) {
    let mut taken = Vec::new();
    let mut rest = Vec::new();
    for class in [0u8, 1] {
        let mut members: Vec<&String> = ids
            .iter()
            .filter(|(_, y)| *y == class)
            .map(|(id, _)| id)
            .collect();
        members.shuffle(rng);
        let n = (fraction * members.len() as f64).round() as usize;
        taken.extend(members[..n].iter().map(|s| s.to_string()));
        rest.extend(members[n..].iter().map(|s| s.to_string()));
    }
    taken.sort();
    rest.sort();
    (taken, rest)
}

impl SplitSet {
    /// Stratified by label: a test set of `test_fraction` of each class is
    /// held out once; each repetition then draws `val_fraction` of each
    /// class of the remainder for validation. Id lists are sorted.
    pub fn stratified(
        ids: &[String],
        labels: &[u8],
        k: usize,
        val_fraction: f64,
        test_fraction: f64,
        seed: u64,
    ) -> Result<SplitSet> {
        if k == 0 {
            return Err(MilError::InvalidConfig(
                "number of splits must be positive".into(),
            ));
        }
        if ids.len() != labels.len() {
            return Err(MilError::Shape(format!(
                "{} ids but {} labels",
                ids.len(),
                labels.len()
            )));
        }
        if !(val_fraction > 0.0 && val_fraction < 1.0) || !(0.0..1.0).contains(&test_fraction) {
            return Err(MilError::InvalidConfig(
                "val_fraction must lie in (0, 1) and test_fraction in [0, 1)".into(),
            ));
        }
        let pairs: Vec<(String, u8)> = ids
            .iter()
            .cloned()
            .zip(labels.iter().map(|&y| (y != 0) as u8))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (test, pool) = stratified_take(&pairs, test_fraction, &mut rng);
        let pool: Vec<(String, u8)> = pairs
            .iter()
            .filter(|(id, _)| pool.binary_search(id).is_ok())
            .cloned()
            .collect();
        let splits = (0..k)
            .map(|_| {
                let (val, train) = stratified_take(&pool, val_fraction, &mut rng);
                Split { train, val }
            })
            .collect();
        let set = SplitSet { k, splits, test };
        set.validate(None)?;
        Ok(set)
    }

    /// Checks disjointness, nonempty training sets and, when `known` is
    /// given, that every id belongs to the dataset.
    pub fn validate(&self, known: Option<&HashSet<String>>) -> Result<()> {
        if self.k == 0 || self.splits.len() != self.k {
            return Err(MilError::InvalidConfig(format!(
                "split set declares k = {} but has {} splits",
                self.k,
                self.splits.len()
            )));
        }
        let test: HashSet<&String> = self.test.iter().collect();
        for (r, s) in self.splits.iter().enumerate() {
            if s.train.is_empty() {
                return Err(MilError::InvalidConfig(format!(
                    "split {r} has no training bags"
                )));
            }
            let train: HashSet<&String> = s.train.iter().collect();
            for id in &s.val {
                if train.contains(id) || test.contains(id) {
                    return Err(MilError::InvalidConfig(format!(
                        "bag `{id}` appears twice in split {r}"
                    )));
                }
            }
            if let Some(id) = s.train.iter().find(|id| test.contains(id)) {
                return Err(MilError::InvalidConfig(format!(
                    "bag `{id}` appears twice in split {r}"
                )));
            }
        }
        if let Some(known) = known {
            let all = self
                .splits
                .iter()
                .flat_map(|s| s.train.iter().chain(&s.val))
                .chain(&self.test);
            for id in all {
                if !known.contains(id) {
                    return Err(MilError::UnknownBag(id.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| MilError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SplitSet> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| MilError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stratified_splits_are_disjoint_and_balanced() {
        let ids: Vec<String> = (0..50).map(|i| format!("b{i:02}")).collect();
        let labels: Vec<u8> = (0..50).map(|i| (i < 20) as u8).collect();
        let s = SplitSet::stratified(&ids, &labels, 5, 0.25, 0.2, 3).unwrap();
        assert_eq!(s.test.len(), 10);
        assert_eq!(s.test.iter().filter(|id| id.as_str() < "b20").count(), 4);
        for split in &s.splits {
            assert_eq!(split.val.len() + split.train.len(), 40);
            assert_eq!(split.val.len(), 10);
        }
        assert_ne!(s.splits[0], s.splits[1]);
        assert_eq!(
            s,
            SplitSet::stratified(&ids, &labels, 5, 0.25, 0.2, 3).unwrap()
        );
    }

    #[test]
    fn overlap_is_rejected() {
        let s = SplitSet {
            k: 1,
            splits: vec![Split {
                train: vec!["a".into()],
                val: vec!["a".into()],
            }],
            test: vec![],
        };
        assert!(s.validate(None).is_err());
    }
}
