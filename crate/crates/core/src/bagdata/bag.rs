use ndarray::{Array1, Array2, Axis};

use crate::error::{MilError, Result};

/// Undirected, weighted instance graph over the `n` instances of a bag.
///
/// Stored as a canonical edge list: each undirected edge appears once as
/// `(i, j)` with `i < j`, sorted lexicographically. Symmetry and a zero
/// diagonal therefore hold by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    n: usize,
    edges: Vec<(usize, usize)>,
    weights: Vec<f32>,
}

impl Adjacency {
    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        Adjacency {
            n,
            edges: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Builds a graph from an edge list. Each undirected edge may be given in
    /// either orientation, or in both with equal weights. Zero-weight edges
    /// are dropped.
    pub fn new(n: usize, edges: &[(usize, usize)], weights: &[f32]) -> Result<Self> {
        if edges.len() != weights.len() {
            return Err(MilError::InvalidAdjacency(format!(
                "{} edges but {} weights",
                edges.len(),
                weights.len()
            )));
        }
        let mut canon: Vec<((usize, usize), f32)> = Vec::with_capacity(edges.len());
        for (&(i, j), &w) in edges.iter().zip(weights) {
            if i >= n || j >= n {
                return Err(MilError::InvalidAdjacency(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i == j {
                return Err(MilError::InvalidAdjacency(format!(
                    "self loop at node {i}; diagonal must be zero"
                )));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(MilError::InvalidAdjacency(format!(
                    "negative or non-finite weight {w} on edge ({i}, {j})"
                )));
            }
            canon.push(((i.min(j), i.max(j)), w));
        }
        canon.sort_by_key(|e| e.0);

        let mut out_edges = Vec::with_capacity(canon.len());
        let mut out_weights = Vec::with_capacity(canon.len());
        let mut k = 0;
        while k < canon.len() {
            let (e, w) = canon[k];
            let mut run = 1;
            while k + run < canon.len() && canon[k + run].0 == e {
                if canon[k + run].1 != w {
                    return Err(MilError::InvalidAdjacency(format!(
                        "asymmetric weights on edge ({}, {})",
                        e.0, e.1
                    )));
                }
                run += 1;
            }
            if run > 2 {
                return Err(MilError::InvalidAdjacency(format!(
                    "edge ({}, {}) listed {run} times",
                    e.0, e.1
                )));
            }
            if w > 0.0 {
                out_edges.push(e);
                out_weights.push(w);
            }
            k += run;
        }
        Ok(Adjacency {
            n,
            edges: out_edges,
            weights: out_weights,
        })
    }

    /// Converts a dense square matrix; it must be symmetric, nonnegative and
    /// have a zero diagonal.
    pub fn from_dense(a: &Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(MilError::InvalidAdjacency(format!(
                "matrix is {}x{}, expected square",
                n,
                a.ncols()
            )));
        }
        let mut edges = Vec::new();
        let mut weights = Vec::new();
        for i in 0..n {
            if a[[i, i]] != 0.0 {
                return Err(MilError::InvalidAdjacency(format!(
                    "nonzero diagonal at node {i}"
                )));
            }
            for j in (i + 1)..n {
                if a[[i, j]] != a[[j, i]] {
                    return Err(MilError::InvalidAdjacency(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
                if a[[i, j]] != 0.0 {
                    edges.push((i, j));
                    weights.push(a[[i, j]] as f32);
                }
            }
        }
        Adjacency::new(n, &edges, &weights)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Undirected edges, `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Weighted degree of every node.
    pub fn degrees(&self) -> Vec<f64> {
        let mut deg = vec![0.0; self.n];
        for (&(i, j), &w) in self.edges.iter().zip(&self.weights) {
            deg[i] += w as f64;
            deg[j] += w as f64;
        }
        deg
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for (&(i, j), &w) in self.edges.iter().zip(&self.weights) {
            a[[i, j]] = w as f64;
            a[[j, i]] = w as f64;
        }
        a
    }

    /// Relabels nodes so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n, "permutation length");
        let mut inverse = vec![0; self.n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let edges: Vec<_> = self
            .edges
            .iter()
            .map(|&(i, j)| (inverse[i], inverse[j]))
            .collect();
        Adjacency::new(self.n, &edges, &self.weights).expect("permutation preserves validity")
    }
}

/// One labelled MIL example.
///
/// Only the bag label is used for supervision; instance labels, when
/// present, are kept for evaluation. All optional fields have one row per
/// instance. Construct with [`Bag::new`] and the `with_*` builders, which
/// enforce the invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    bag_id: String,
    features: Array2<f32>,
    label: u8,
    inst_labels: Option<Array1<u8>>,
    coords: Option<Array2<i64>>,
    adjacency: Option<Adjacency>,
}

impl Bag {
    pub fn new(bag_id: impl Into<String>, features: Array2<f32>, label: u8) -> Result<Self> {
        let bag_id = bag_id.into();
        let invalid = |reason: String| MilError::InvalidBag {
            bag_id: bag_id.clone(),
            reason,
        };
        if features.nrows() == 0 {
            return Err(invalid("bag has no instances".into()));
        }
        if features.ncols() == 0 {
            return Err(invalid("feature dimension is zero".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(invalid("features contain NaN or Inf".into()));
        }
        if label > 1 {
            return Err(invalid(format!("bag label {label} is not binary")));
        }
        Ok(Bag {
            bag_id,
            features,
            label,
            inst_labels: None,
            coords: None,
            adjacency: None,
        })
    }

    pub fn with_inst_labels(mut self, inst_labels: Array1<u8>) -> Result<Self> {
        self.check_rows("inst_labels", inst_labels.len())?;
        if inst_labels.iter().any(|&y| y > 1) {
            return Err(self.invalid("instance labels must be 0 or 1"));
        }
        if self.label == 0 && inst_labels.iter().any(|&y| y == 1) {
            return Err(self.invalid("negative bag contains a positive instance"));
        }
        self.inst_labels = Some(inst_labels);
        Ok(self)
    }

    pub fn with_coords(mut self, coords: Array2<i64>) -> Result<Self> {
        self.check_rows("coords", coords.nrows())?;
        if coords.ncols() == 0 {
            return Err(self.invalid("coords need at least one column"));
        }
        self.coords = Some(coords);
        Ok(self)
    }

    pub fn with_adjacency(mut self, adjacency: Adjacency) -> Result<Self> {
        self.check_rows("adjacency", adjacency.n())?;
        self.adjacency = Some(adjacency);
        Ok(self)
    }

    fn check_rows(&self, field: &'static str, found: usize) -> Result<()> {
        if found != self.n_instances() {
            return Err(MilError::FieldLengthMismatch {
                bag_id: self.bag_id.clone(),
                field,
                reference: "features",
                found,
                expected: self.n_instances(),
            });
        }
        Ok(())
    }

    fn invalid(&self, reason: &str) -> MilError {
        MilError::InvalidBag {
            bag_id: self.bag_id.clone(),
            reason: reason.into(),
        }
    }

    pub fn bag_id(&self) -> &str {
        &self.bag_id
    }

    pub fn features(&self) -> &Array2<f32> {
        &self.features
    }

    pub fn label(&self) -> u8 {
        self.label
    }

    pub fn inst_labels(&self) -> Option<&Array1<u8>> {
        self.inst_labels.as_ref()
    }

    pub fn coords(&self) -> Option<&Array2<i64>> {
        self.coords.as_ref()
    }

    pub fn adjacency(&self) -> Option<&Adjacency> {
        self.adjacency.as_ref()
    }

    pub fn n_instances(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Same bag with instances reordered: new instance `k` is old `perm[k]`.
    /// Every per-instance field is permuted consistently.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n_instances(), "permutation length");
        Bag {
            bag_id: self.bag_id.clone(),
            features: self.features.select(Axis(0), perm),
            label: self.label,
            inst_labels: self.inst_labels.as_ref().map(|y| y.select(Axis(0), perm)),
            coords: self.coords.as_ref().map(|c| c.select(Axis(0), perm)),
            adjacency: self.adjacency.as_ref().map(|a| a.permuted(perm)),
        }
    }
}
