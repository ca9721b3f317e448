use ndarray::{s, Array2, Array3};

use super::bag::{Adjacency, Bag};
use crate::error::{MilError, Result};

/// A set of bags padded to a common length.
///
/// Padded feature entries are exactly zero, but nothing downstream relies on
/// that: every consumer goes through `mask`. Instance graphs are kept as a
/// per-bag sparse list; [`Batch::dense_adjacency`] builds the zero-padded
/// `B×Nmax×Nmax` view on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `B×Nmax×D`, zero-padded.
    pub features: Array3<f32>,
    /// `B×Nmax`, true for real instances.
    pub mask: Array2<bool>,
    pub labels: Vec<u8>,
    pub sizes: Vec<usize>,
    pub bag_ids: Vec<String>,
    /// `B×Nmax`, zero-padded.
    pub inst_labels: Option<Array2<u8>>,
    /// `B×Nmax×k`, zero-padded.
    pub coords: Option<Array3<i64>>,
    pub adjacency: Option<Vec<Adjacency>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[2]
    }

    pub fn mask_row(&self, b: usize) -> Vec<bool> {
        self.mask.row(b).to_vec()
    }

    /// Zero-padded dense view of the instance graphs, `B×Nmax×Nmax`.
    pub fn dense_adjacency(&self) -> Option<Array3<f64>> {
        let adj = self.adjacency.as_ref()?;
        let nmax = self.max_len();
        let mut out = Array3::zeros((self.len(), nmax, nmax));
        for (b, a) in adj.iter().enumerate() {
            for (&(i, j), &w) in a.edges().iter().zip(a.weights()) {
                out[[b, i, j]] = w as f64;
                out[[b, j, i]] = w as f64;
            }
        }
        Some(out)
    }

    /// Checks the structural invariants that `collate` guarantees.
    pub fn validate(&self) -> Result<()> {
        let corrupt = |m: String| Err(MilError::CorruptBatch(m));
        let b = self.sizes.len();
        let (fb, nmax, _) = self.features.dim();
        if b == 0 {
            return Err(MilError::EmptyBatch);
        }
        if fb != b || self.mask.nrows() != b || self.labels.len() != b || self.bag_ids.len() != b {
            return corrupt(format!(
                "batch size disagreement across fields (sizes has {b})"
            ));
        }
        if self.mask.ncols() != nmax {
            return corrupt(format!(
                "mask has {} columns, features have {nmax}",
                self.mask.ncols()
            ));
        }
        if self.sizes.iter().copied().max() != Some(nmax) {
            return corrupt(format!("padded length {nmax} is not max(sizes)"));
        }
        for (row, &n) in self.sizes.iter().enumerate() {
            let m = self.mask.row(row);
            let prefix_ok = m.iter().enumerate().all(|(i, &v)| v == (i < n));
            if n == 0 || !prefix_ok {
                return corrupt(format!("mask row {row} does not match size {n}"));
            }
        }
        if let Some(y) = &self.inst_labels {
            if y.dim() != (b, nmax) {
                return corrupt("inst_labels shape".into());
            }
        }
        if let Some(c) = &self.coords {
            if c.shape()[..2] != [b, nmax] {
                return corrupt("coords shape".into());
            }
        }
        if let Some(adj) = &self.adjacency {
            if adj.len() != b || adj.iter().zip(&self.sizes).any(|(a, &n)| a.n() != n) {
                return corrupt("adjacency sizes".into());
            }
        }
        Ok(())
    }
}

fn all_or_none(bags: &[Bag], field: &'static str, has: impl Fn(&Bag) -> bool) -> Result<bool> {
    let present = bags.iter().filter(|b| has(b)).count();
    match present {
        0 => Ok(false),
        n if n == bags.len() => Ok(true),
        _ => Err(MilError::InconsistentField(field)),
    }
}

/// Pads a list of bags into one batch, preserving order.
pub fn collate(bags: &[Bag]) -> Result<Batch> {
    let first = bags.first().ok_or(MilError::EmptyBatch)?;
    let d = first.dim();
    for bag in bags {
        if bag.dim() != d {
            return Err(MilError::InconsistentFeatureDim {
                expected: d,
                found: bag.dim(),
                bag_id: bag.bag_id().to_string(),
            });
        }
    }
    let has_inst = all_or_none(bags, "inst_labels", |b| b.inst_labels().is_some())?;
    let has_coords = all_or_none(bags, "coords", |b| b.coords().is_some())?;
    let has_adj = all_or_none(bags, "adjacency", |b| b.adjacency().is_some())?;
    let coord_dim = if has_coords {
        let k = first.coords().unwrap().ncols();
        if bags.iter().any(|b| b.coords().unwrap().ncols() != k) {
            return Err(MilError::InconsistentField("coords"));
        }
        k
    } else {
        0
    };

    let sizes: Vec<usize> = bags.iter().map(Bag::n_instances).collect();
    let nmax = *sizes.iter().max().unwrap();
    let nb = bags.len();

    let mut features = Array3::zeros((nb, nmax, d));
    let mut mask = Array2::from_elem((nb, nmax), false);
    let mut inst_labels = has_inst.then(|| Array2::zeros((nb, nmax)));
    let mut coords = has_coords.then(|| Array3::zeros((nb, nmax, coord_dim)));

    for (b, bag) in bags.iter().enumerate() {
        let n = bag.n_instances();
        features.slice_mut(s![b, ..n, ..]).assign(bag.features());
        mask.slice_mut(s![b, ..n]).fill(true);
        if let Some(y) = inst_labels.as_mut() {
            y.slice_mut(s![b, ..n]).assign(bag.inst_labels().unwrap());
        }
        if let Some(c) = coords.as_mut() {
            c.slice_mut(s![b, ..n, ..]).assign(bag.coords().unwrap());
        }
    }

    Ok(Batch {
        features,
        mask,
        labels: bags.iter().map(Bag::label).collect(),
        sizes,
        bag_ids: bags.iter().map(|b| b.bag_id().to_string()).collect(),
        inst_labels,
        coords,
        adjacency: has_adj.then(|| {
            bags.iter()
                .map(|b| b.adjacency().unwrap().clone())
                .collect()
        }),
    })
}

/// Strips padding and returns the original bags.
pub fn uncollate(batch: &Batch) -> Result<Vec<Bag>> {
    batch.validate()?;
    let mut out = Vec::with_capacity(batch.len());
    for (b, &n) in batch.sizes.iter().enumerate() {
        let features = batch.features.slice(s![b, ..n, ..]).to_owned();
        let mut bag = Bag::new(batch.bag_ids[b].clone(), features, batch.labels[b])?;
        if let Some(y) = &batch.inst_labels {
            bag = bag.with_inst_labels(y.slice(s![b, ..n]).to_owned())?;
        }
        if let Some(c) = &batch.coords {
            bag = bag.with_coords(c.slice(s![b, ..n, ..]).to_owned())?;
        }
        if let Some(adj) = &batch.adjacency {
            bag = bag.with_adjacency(adj[b].clone())?;
        }
        out.push(bag);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    fn bag(id: &str, n: usize, d: usize) -> Bag {
        let f = Array2::from_shape_fn((n, d), |(i, j)| (i * d + j) as f32 + 0.5);
        Bag::new(id, f, 0).unwrap()
    }

    #[test]
    fn pads_to_longest_bag() {
        let batch = collate(&[bag("a", 3, 2), bag("b", 5, 2)]).unwrap();
        assert_eq!(batch.max_len(), 5);
        assert_eq!(batch.sizes, vec![3, 5]);
        let sums: Vec<usize> = batch
            .mask
            .rows()
            .into_iter()
            .map(|r| r.iter().filter(|&&m| m).count())
            .collect();
        assert_eq!(sums, vec![3, 5]);
        assert!(batch
            .features
            .slice(s![0, 3.., ..])
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn single_bag_is_identity() {
        let b = bag("solo", 4, 3);
        let batch = collate(std::slice::from_ref(&b)).unwrap();
        assert!(batch.mask.iter().all(|&m| m));
        assert_eq!(batch.features.slice(s![0, .., ..]), b.features());
        assert_eq!(uncollate(&batch).unwrap(), vec![b]);
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert_eq!(collate(&[]).unwrap_err().to_string(), "empty batch");
        let err = collate(&[bag("a", 2, 2), bag("b", 2, 3)]).unwrap_err();
        assert!(err.to_string().contains("inconsistent feature dimension"));
        let with_labels = bag("c", 2, 2).with_inst_labels(Array1::zeros(2)).unwrap();
        let err = collate(&[with_labels, bag("d", 2, 2)]).unwrap_err();
        assert!(err.to_string().contains("inst_labels"));
    }

    #[test]
    fn sizes_three_and_five_uncollate() {
        let bags = vec![bag("a", 3, 2), bag("b", 5, 2)];
        let back = uncollate(&collate(&bags).unwrap()).unwrap();
        assert_eq!(back[0].n_instances(), 3);
        assert_eq!(back[1].n_instances(), 5);
    }

    #[test]
    fn corrupt_mask_is_detected() {
        let mut batch = collate(&[bag("a", 3, 2), bag("b", 5, 2)]).unwrap();
        batch.mask[[0, 4]] = true;
        assert!(uncollate(&batch)
            .unwrap_err()
            .to_string()
            .starts_with("corrupt batch"));
        let mut batch = collate(&[bag("a", 3, 2)]).unwrap();
        batch.sizes[0] = 2;
        assert!(matches!(uncollate(&batch), Err(MilError::CorruptBatch(_))));
    }

    #[test]
    fn dense_adjacency_is_zero_padded() {
        let a = bag("a", 2, 1)
            .with_adjacency(Adjacency::new(2, &[(0, 1)], &[1.0]).unwrap())
            .unwrap();
        let b = bag("b", 3, 1).with_adjacency(Adjacency::empty(3)).unwrap();
        let dense = collate(&[a, b]).unwrap().dense_adjacency().unwrap();
        assert_eq!(dense.dim(), (2, 3, 3));
        assert_eq!(
            dense.slice(s![0, .., ..]),
            array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
        );
        assert!(dense.slice(s![1, .., ..]).iter().all(|&v| v == 0.0));
    }
}
