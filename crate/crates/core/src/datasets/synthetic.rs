//! Seeded synthetic bag generators for algorithmic unit tests.
//!
//! Every generator draws background instances from `N(0, I)` and witnesses
//! from `N(s·e₁, I)` where `s` is `class_separation`. Bag sizes are uniform on
//! `[max(1, m/2), 3m/2]` (integer division) for `m = mean_bag_size`, and bag
//! labels are fair coin flips.
//!
//! - `gaussian_witness`: positive bags hold `max(1, round(rate·N))` witnesses;
//!   negatives hold none.
//! - `count_threshold`: positive bags hold `max(k, round(rate·N))` witnesses.
//!   Negative bags hold between 1 and `k-1` witness-distributed instances, so
//!   presence alone does not decide the label. Those sub-threshold instances
//!   carry instance label 0, because a negative bag has no positive instances.
//! - `distractor`: `gaussian_witness` plus, in a random half of all bags
//!   independent of the label, `max(1, round(rate·N))` distractors drawn from
//!   `N(s·e₂, I)`.
//!
//! Instances sit on a row-major grid of width `ceil(sqrt(N))`. Witnesses
//! occupy one contiguous run of grid cells, so they tend to be neighbours
//! in the 4-neighbourhood graph stored with each bag.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bagdata::{build_adjacency, Bag, DEFAULT_GRAPH_METRIC, DEFAULT_GRAPH_THRESHOLD};
use crate::error::{MilError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    GaussianWitness,
    CountThreshold,
    Distractor,
}

fn default_kind() -> SyntheticKind {
    SyntheticKind::GaussianWitness
}
fn default_n_bags() -> usize {
    100
}
fn default_mean_bag_size() -> usize {
    20
}
fn default_witness_rate() -> f64 {
    0.05
}
fn default_feature_dim() -> usize {
    8
}
fn default_class_separation() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "default_kind")]
    pub kind: SyntheticKind,
    #[serde(default = "default_n_bags")]
    pub n_bags: usize,
    #[serde(default = "default_mean_bag_size")]
    pub mean_bag_size: usize,
    #[serde(default = "default_witness_rate")]
    pub witness_rate: f64,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_class_separation")]
    pub class_separation: f64,
    /// Only meaningful for `count_threshold`, where it is required.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_k: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            kind: default_kind(),
            n_bags: default_n_bags(),
            mean_bag_size: default_mean_bag_size(),
            witness_rate: default_witness_rate(),
            feature_dim: default_feature_dim(),
            class_separation: default_class_separation(),
            threshold_k: None,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn size_range(&self) -> (usize, usize) {
        let lo = (self.mean_bag_size / 2).max(1);
        let hi = (3 * self.mean_bag_size / 2).max(lo);
        (lo, hi)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(MilError::InvalidConfig(m));
        if self.n_bags == 0 {
            return cfg("n_bags must be positive".into());
        }
        if self.mean_bag_size == 0 {
            return cfg("mean_bag_size must be positive".into());
        }
        if self.feature_dim == 0 {
            return cfg("feature_dim must be positive".into());
        }
        if !(self.witness_rate > 0.0 && self.witness_rate < 1.0) {
            return cfg(format!(
                "witness_rate must lie in (0, 1), got {}",
                self.witness_rate
            ));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return cfg("class_separation must be positive".into());
        }
        match (self.kind, self.threshold_k) {
            (SyntheticKind::CountThreshold, None) => {
                return cfg("count_threshold requires threshold_k".into())
            }
            (SyntheticKind::CountThreshold, Some(0)) => {
                return cfg("threshold_k must be positive".into())
            }
            (SyntheticKind::CountThreshold, Some(_)) => {}
            (_, Some(_)) => return cfg("threshold_k only applies to count_threshold".into()),
            (_, None) => {}
        }

        if self.witness_rate * (self.mean_bag_size as f64) < 1.0 {
            return Err(MilError::Infeasible(format!(
                "witness_rate·mean_bag_size = {} < 1",
                self.witness_rate * self.mean_bag_size as f64
            )));
        }
        let (lo, _) = self.size_range();
        if let Some(k) = self.threshold_k {
            if k > lo {
                return Err(MilError::Infeasible(format!(
                    "threshold_k = {k} exceeds the smallest bag size {lo}"
                )));
            }
        }
        if self.kind == SyntheticKind::Distractor && self.feature_dim < 2 {
            return Err(MilError::Infeasible(
                "distractors need feature_dim >= 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Role {
    Background,
    Witness,
    /// Witness-distributed, but in a bag below the count threshold.
    SubThreshold,
    Distractor,
}

fn rate_count(rate: f64, n: usize) -> usize {
    ((rate * n as f64).round() as usize).min(n)
}

/// Places `count` roles as one contiguous run among the cells still holding
/// background instances.
fn place_run(roles: &mut [Role], count: usize, role: Role, rng: &mut ChaCha8Rng) {
    let free: Vec<usize> = (0..roles.len())
        .filter(|&i| roles[i] == Role::Background)
        .collect();
    let count = count.min(free.len());
    if count == 0 {
        return;
    }
    let start = rng.random_range(0..=free.len() - count);
    for &i in &free[start..start + count] {
        roles[i] = role;
    }
}

pub fn grid_coords(n: usize) -> Array2<i64> {
    let width = (n as f64).sqrt().ceil().max(1.0) as usize;
    Array2::from_shape_fn((n, 2), |(i, c)| {
        if c == 0 {
            (i / width) as i64
        } else {
            (i % width) as i64
        }
    })
}

/// Generates `spec.n_bags` bags, fully determined by `spec` (including seed).
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<Bag>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.size_range();
    let d = spec.feature_dim;
    let sep = spec.class_separation;
    let width = format!("{}", spec.n_bags.saturating_sub(1)).len().max(5);

    let mut bags = Vec::with_capacity(spec.n_bags);
    for b in 0..spec.n_bags {
        let n = rng.random_range(lo..=hi);
        let label = u8::from(rng.random_bool(0.5));
        let mut roles = vec![Role::Background; n];

        match spec.kind {
            SyntheticKind::GaussianWitness | SyntheticKind::Distractor => {
                if label == 1 {
                    place_run(
                        &mut roles,
                        rate_count(spec.witness_rate, n).max(1),
                        Role::Witness,
                        &mut rng,
                    );
                }
                if spec.kind == SyntheticKind::Distractor && rng.random_bool(0.5) {
                    let count = rate_count(spec.witness_rate, n).max(1);
                    place_run(&mut roles, count, Role::Distractor, &mut rng);
                }
            }
            SyntheticKind::CountThreshold => {
                let k = spec.threshold_k.unwrap();
                if label == 1 {
                    place_run(
                        &mut roles,
                        rate_count(spec.witness_rate, n).max(k),
                        Role::Witness,
                        &mut rng,
                    );
                } else if k > 1 {
                    let m = rng.random_range(1..k);
                    place_run(&mut roles, m, Role::SubThreshold, &mut rng);
                }
            }
        }

        let mut features = Array2::<f32>::zeros((n, d));
        for (i, role) in roles.iter().enumerate() {
            for j in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                let shift = match (role, j) {
                    (Role::Witness | Role::SubThreshold, 0) => sep,
                    (Role::Distractor, 1) => sep,
                    _ => 0.0,
                };
                features[[i, j]] = (z + shift) as f32;
            }
        }
        let inst_labels: Array1<u8> = roles
            .iter()
            .map(|&r| u8::from(r == Role::Witness))
            .collect();
        let coords = grid_coords(n);
        let adjacency = build_adjacency(&coords, DEFAULT_GRAPH_THRESHOLD, DEFAULT_GRAPH_METRIC)?;
        let bag = Bag::new(format!("bag{b:0width$}"), features, label)?
            .with_inst_labels(inst_labels)?
            .with_coords(coords)?
            .with_adjacency(adjacency)?;
        bags.push(bag);
    }
    Ok(bags)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: SyntheticKind) -> SyntheticSpec {
        SyntheticSpec {
            kind,
            n_bags: 40,
            threshold_k: (kind == SyntheticKind::CountThreshold).then_some(2),
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_bags() {
        let s = spec(SyntheticKind::GaussianWitness);
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        let other = SyntheticSpec {
            seed: 8,
            ..s.clone()
        };
        assert_ne!(generate(&s).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn negatives_have_no_positive_instances() {
        for kind in [
            SyntheticKind::GaussianWitness,
            SyntheticKind::CountThreshold,
            SyntheticKind::Distractor,
        ] {
            for bag in generate(&spec(kind)).unwrap() {
                if bag.label() == 0 {
                    assert!(bag.inst_labels().unwrap().iter().all(|&y| y == 0));
                } else {
                    assert!(bag.inst_labels().unwrap().iter().any(|&y| y == 1));
                }
            }
        }
    }

    #[test]
    fn sizes_stay_in_range() {
        let s = spec(SyntheticKind::Distractor);
        let (lo, hi) = s.size_range();
        assert_eq!((lo, hi), (10, 30));
        for bag in generate(&s).unwrap() {
            assert!((lo..=hi).contains(&bag.n_instances()));
        }
    }

    #[test]
    fn infeasible_configurations() {
        let low_rate = SyntheticSpec {
            witness_rate: 0.01,
            ..Default::default()
        };
        assert!(generate(&low_rate)
            .unwrap_err()
            .to_string()
            .starts_with("infeasible witness configuration"));
        let big_k = SyntheticSpec {
            kind: SyntheticKind::CountThreshold,
            threshold_k: Some(11),
            ..Default::default()
        };
        assert!(matches!(generate(&big_k), Err(MilError::Infeasible(_))));
        let missing_k = SyntheticSpec {
            kind: SyntheticKind::CountThreshold,
            ..Default::default()
        };
        assert!(matches!(
            generate(&missing_k),
            Err(MilError::InvalidConfig(_))
        ));
    }

    #[test]
    fn grid_is_row_major() {
        let c = grid_coords(5);
        assert_eq!(c.row(3).to_vec(), vec![1, 0]);
        assert_eq!(c.row(4).to_vec(), vec![1, 1]);
    }
}
