//! Instance-graph construction and normalization.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::bag::Adjacency;
use crate::error::{MilError, Result};

/// Distance used to connect instances by their coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    L1,
    L2,
    Linf,
}

impl Metric {
    fn within(self, a: ArrayView1<i64>, b: ArrayView1<i64>, threshold: f64) -> bool {
        let diffs = a
            .iter()
            .zip(b.iter())
            .map(|(&x, &y)| (x - y).unsigned_abs() as f64);
        match self {
            Metric::L1 => diffs.sum::<f64>() <= threshold,
            Metric::L2 => diffs.map(|d| d * d).sum::<f64>() <= threshold * threshold,
            Metric::Linf => diffs.fold(0.0, f64::max) <= threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// `D⁻¹A`
    Row,
    /// `D^(-1/2) A D^(-1/2)`
    Symmetric,
    /// `D̂^(-1/2) (A + I) D̂^(-1/2)`
    SymmetricWithSelfLoops,
}

/// Square sparse matrix in coordinate form, entries sorted row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub n: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for &(i, j, v) in &self.entries {
            a[[i, j]] += v;
        }
        a
    }

    /// Dense copy embedded in the top-left corner of an `m×m` zero matrix.
    pub fn to_dense_padded(&self, m: usize) -> Array2<f64> {
        assert!(m >= self.n);
        let mut a = Array2::zeros((m, m));
        for &(i, j, v) in &self.entries {
            a[[i, j]] += v;
        }
        a
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.0 == i && e.1 == j)
            .map(|e| e.2)
            .sum()
    }
}

/// Connects every pair of distinct instances whose coordinates lie within
/// `threshold` under `metric`, all edges with weight 1.
pub fn build_adjacency(coords: &Array2<i64>, threshold: f64, metric: Metric) -> Result<Adjacency> {
    let n = coords.nrows();
    if n == 0 {
        return Err(MilError::InvalidAdjacency("no coordinates".into()));
    }
    if threshold.is_nan() || threshold < 0.0 {
        return Err(MilError::InvalidAdjacency(format!(
            "threshold must be nonnegative, got {threshold}"
        )));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if metric.within(coords.row(i), coords.row(j), threshold) {
                edges.push((i, j));
            }
        }
    }
    let weights = vec![1.0; edges.len()];
    Adjacency::new(n, &edges, &weights)
}

/// Degree-normalizes a graph. Nodes with zero degree keep all-zero rows in
/// the modes without self loops.
pub fn normalize_adjacency(adj: &Adjacency, mode: NormMode) -> Result<SparseMatrix> {
    if adj.weights().iter().any(|&w| w < 0.0) {
        return Err(MilError::InvalidAdjacency("negative entries".into()));
    }
    let n = adj.n();
    let mut deg = adj.degrees();
    if mode == NormMode::SymmetricWithSelfLoops {
        deg.iter_mut().for_each(|d| *d += 1.0);
    }
    let inv = |d: f64, p: f64| if d > 0.0 { d.powf(-p) } else { 0.0 };
    let scale = |i: usize, j: usize| match mode {
        NormMode::Row => inv(deg[i], 1.0),
        NormMode::Symmetric | NormMode::SymmetricWithSelfLoops => {
            inv(deg[i], 0.5) * inv(deg[j], 0.5)
        }
    };

    let mut entries = Vec::with_capacity(2 * adj.n_edges() + n);
    for (&(i, j), &w) in adj.edges().iter().zip(adj.weights()) {
        entries.push((i, j, w as f64 * scale(i, j)));
        entries.push((j, i, w as f64 * scale(j, i)));
    }
    if mode == NormMode::SymmetricWithSelfLoops {
        for i in 0..n {
            entries.push((i, i, scale(i, i)));
        }
    }
    entries.sort_by_key(|e| (e.0, e.1));
    Ok(SparseMatrix { n, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_node_has_no_edges() {
        let a = build_adjacency(&array![[3, 4]], 10.0, Metric::L2).unwrap();
        assert_eq!(a.n_edges(), 0);
    }

    #[test]
    fn metrics_differ_on_diagonal_neighbours() {
        let c = array![[0, 0], [1, 1]];
        assert_eq!(build_adjacency(&c, 1.0, Metric::L1).unwrap().n_edges(), 0);
        assert_eq!(build_adjacency(&c, 1.0, Metric::Linf).unwrap().n_edges(), 1);
        assert_eq!(build_adjacency(&c, 1.5, Metric::L2).unwrap().n_edges(), 1);
    }

    #[test]
    fn negative_threshold_rejected() {
        assert!(build_adjacency(&array![[0]], -1.0, Metric::L1).is_err());
    }

    #[test]
    fn two_node_row_normalization() {
        let a = Adjacency::new(2, &[(0, 1)], &[1.0]).unwrap();
        let r = normalize_adjacency(&a, NormMode::Row).unwrap().to_dense();
        assert_eq!(r, array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn isolated_node_row_stays_zero() {
        let a = Adjacency::new(3, &[(0, 1)], &[2.0]).unwrap();
        for mode in [NormMode::Row, NormMode::Symmetric] {
            let d = normalize_adjacency(&a, mode).unwrap().to_dense();
            assert!(d.row(2).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn self_loops_on_empty_graph_give_identity() {
        let d = normalize_adjacency(&Adjacency::empty(3), NormMode::SymmetricWithSelfLoops)
            .unwrap()
            .to_dense();
        assert_eq!(d, Array2::<f64>::eye(3));
    }
}
