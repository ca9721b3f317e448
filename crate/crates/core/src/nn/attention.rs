//! Attention pooling: `eᵢ = w·tanh(V hᵢ)` (optionally gated by
//! `σ(U hᵢ)`), `a = masked_softmax(e)`, `z = Σ aᵢ hᵢ`.

use ndarray::{Array1, Array2};
use rand::Rng;

use super::params::{uniform_init, ParamId, ParamStore};
use super::tape::{Mat, Tape, Var};
use crate::error::{MilError, Result};

/// Plain-data attention parameters. `v` and `u` are `L×D`, `w` has length `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPoolParams {
    pub v: Mat,
    pub w: Array1<f64>,
    pub u: Option<Mat>,
}

impl AttentionPoolParams {
    pub fn random(in_dim: usize, width: usize, gated: bool, rng: &mut impl Rng) -> Self {
        AttentionPoolParams {
            v: uniform_init(width, in_dim, in_dim, rng),
            w: uniform_init(width, 1, width, rng).column(0).to_owned(),
            u: gated.then(|| uniform_init(width, in_dim, in_dim, rng)),
        }
    }

    pub fn width(&self) -> usize {
        self.v.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.v.ncols()
    }
}

/// Attention pooling layer bound to a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AttentionPool {
    v: ParamId,
    w: ParamId,
    u: Option<ParamId>,
    in_dim: usize,
}

impl AttentionPool {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        width: usize,
        gated: bool,
        rng: &mut impl Rng,
    ) -> Self {
        Self::register(
            store,
            name,
            &AttentionPoolParams::random(in_dim, width, gated, rng),
        )
    }

    pub fn register(store: &mut ParamStore, name: &str, p: &AttentionPoolParams) -> Self {
        let w = p.w.clone().insert_axis(ndarray::Axis(1));
        AttentionPool {
            v: store.add(format!("{name}.v"), p.v.clone()),
            w: store.add(format!("{name}.w"), w),
            u: p.u
                .as_ref()
                .map(|u| store.add(format!("{name}.u"), u.clone())),
            in_dim: p.in_dim(),
        }
    }

    /// Unnormalized attention logits, `N×1`.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Var {
        let v = tape.param(store, self.v);
        let w = tape.param(store, self.w);
        let hv = tape.matmul_t(h, v);
        let mut act = tape.tanh(hv);
        if let Some(u) = self.u {
            let u = tape.param(store, u);
            let hu = tape.matmul_t(h, u);
            let gate = tape.sigmoid(hu);
            act = tape.mul(act, gate);
        }
        tape.matmul(act, w)
    }

    /// Normalizes `logits` (`N×1`) over the unmasked instances and pools `h`.
    /// Returns the bag embedding (`1×D`) and the attention weights (`1×N`).
    pub fn pool(tape: &mut Tape, h: Var, logits: Var, mask: &[bool]) -> Result<(Var, Var)> {
        let n = tape.value(h).nrows();
        if mask.len() != n || tape.value(logits).dim() != (n, 1) {
            return Err(MilError::Shape(format!(
                "attention pooling over {n} instances with {} mask entries",
                mask.len()
            )));
        }
        let row = tape.transpose(logits);
        let mask = Array2::from_shape_vec((1, n), mask.to_vec()).unwrap();
        let a = tape.masked_softmax_rows(row, &mask)?;
        let z = tape.matmul(a, h);
        Ok((z, a))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        mask: &[bool],
    ) -> Result<(Var, Var)> {
        if tape.value(h).ncols() != self.in_dim {
            return Err(MilError::Shape(format!(
                "attention expects width {}, got {}",
                self.in_dim,
                tape.value(h).ncols()
            )));
        }
        let e = self.logits(tape, store, h);
        Self::pool(tape, h, e, mask)
    }
}

/// Pools the rows of `h` (`N×D`); returns `(z, a)`.
pub fn attention_pool(
    h: &Mat,
    params: &AttentionPoolParams,
    mask: &[bool],
) -> Result<(Array1<f64>, Array1<f64>)> {
    let mut store = ParamStore::new();
    let layer = AttentionPool::register(&mut store, "attn", params);
    let mut tape = Tape::new();
    let hv = tape.leaf(h.clone());
    let (z, a) = layer.forward(&mut tape, &store, hv, mask)?;
    Ok((
        tape.value(z).row(0).to_owned(),
        tape.value(a).row(0).to_owned(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_instance_gets_all_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = AttentionPoolParams::random(3, 4, true, &mut rng);
        let h = array![[0.5, -1.0, 2.0]];
        let (z, a) = attention_pool(&h, &p, &[true]).unwrap();
        assert_eq!(a.to_vec(), vec![1.0]);
        assert_eq!(z, h.row(0));
    }

    #[test]
    fn identical_instances_split_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = AttentionPoolParams::random(2, 3, false, &mut rng);
        let h = array![[0.3, 0.7], [0.3, 0.7]];
        let (z, a) = attention_pool(&h, &p, &[true, true]).unwrap();
        assert!((a[0] - 0.5).abs() < 1e-15 && (a[1] - 0.5).abs() < 1e-15);
        assert!((&z - &h.row(0)).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn hand_computed_two_by_two() {
        let p = AttentionPoolParams {
            v: array![[1.0, 0.0], [0.5, -1.0]],
            w: array![1.0, 2.0],
            u: None,
        };
        let h = array![[1.0, 2.0], [-1.0, 0.5]];
        // Scalar oracle.
        let e0 = 1.0 * (1.0f64).tanh() + 2.0 * (0.5f64 * 1.0 - 2.0).tanh();
        let e1 = 1.0 * (-1.0f64).tanh() + 2.0 * (-0.5f64 - 0.5).tanh();
        let (x0, x1) = (e0.exp(), e1.exp());
        let (a0, a1) = (x0 / (x0 + x1), x1 / (x0 + x1));
        let z = [a0 - a1, a0 * 2.0 + a1 * 0.5];
        let (zz, aa) = attention_pool(&h, &p, &[true, true]).unwrap();
        assert!((aa[0] - a0).abs() < 1e-6 && (aa[1] - a1).abs() < 1e-6);
        assert!((zz[0] - z[0]).abs() < 1e-6 && (zz[1] - z[1]).abs() < 1e-6);
    }

    #[test]
    fn masked_rows_get_zero_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = AttentionPoolParams::random(2, 3, true, &mut rng);
        let h = array![[0.3, 0.7], [9.0, -9.0], [1.0, 1.0]];
        let (_, a) = attention_pool(&h, &p, &[true, false, true]).unwrap();
        assert_eq!(a[1], 0.0);
        assert!((a.sum() - 1.0).abs() < 1e-12);
        assert!(attention_pool(&h, &p, &[false, false, false]).is_err());
    }
}
