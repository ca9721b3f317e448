use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Mat, Tape, Var};
use crate::bagdata::{normalize_adjacency, Adjacency, NormMode};
use crate::error::{MilError, Result};

/// Graph convolution `ReLU(Â H W)` with `Â` the self-loop symmetric
/// normalization of the instance graph.
#[derive(Debug, Clone)]
pub struct GraphConv {
    weight: ParamId,
    in_dim: usize,
}

impl GraphConv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), in_dim, out_dim, in_dim, rng);
        GraphConv { weight, in_dim }
    }

    pub fn register(store: &mut ParamStore, name: &str, w: &Mat) -> Self {
        GraphConv {
            weight: store.add(format!("{name}.weight"), w.clone()),
            in_dim: w.nrows(),
        }
    }

    /// `a_hat` is the dense normalized operator (`N×N`) matching `h`'s rows.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var, a_hat: &Mat) -> Result<Var> {
        let (n, d) = tape.value(h).dim();
        if d != self.in_dim || a_hat.dim() != (n, n) {
            return Err(MilError::Shape(format!(
                "graph conv expects {} input features and an {n}x{n} operator, got {d} and {:?}",
                self.in_dim,
                a_hat.dim()
            )));
        }
        let w = tape.param(store, self.weight);
        let hw = tape.matmul(h, w);
        let agg = tape.left_const(a_hat, hw);
        Ok(tape.relu(agg))
    }
}

/// `D̂^(-1/2)(A+I)D̂^(-1/2)` as a dense `m×m` matrix. Padding nodes
/// (`adj.n() ≤ i < m`) get a lone self loop so they never mix with real ones.
pub fn self_loop_normalized_dense(adj: &Adjacency, m: usize) -> Result<Mat> {
    let mut a = normalize_adjacency(adj, NormMode::SymmetricWithSelfLoops)?.to_dense_padded(m);
    for i in adj.n()..m {
        a[[i, i]] = 1.0;
    }
    Ok(a)
}

pub fn graph_conv(h: &Mat, adj: &Adjacency, w: &Mat) -> Result<Mat> {
    if adj.n() != h.nrows() {
        return Err(MilError::Shape(format!(
            "{} node features but {} graph nodes",
            h.nrows(),
            adj.n()
        )));
    }
    let mut store = ParamStore::new();
    let layer = GraphConv::register(&mut store, "gc", w);
    let a_hat = self_loop_normalized_dense(adj, adj.n())?;
    let mut tape = Tape::new();
    let hv = tape.leaf(h.clone());
    let y = layer.forward(&mut tape, &store, hv, &a_hat)?;
    Ok(tape.value(y).clone())
}
