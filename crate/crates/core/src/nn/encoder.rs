//! Pre-norm transformer encoder layer with key-padding mask.
//!
//! ```text
//! x = x + MHA(LN₁(x))        padded keys receive an additive -1e9 bias
//! x = x + W₂ ReLU(W₁ LN₂(x))
//! ```
//!
//! There is no positional encoding, so the layer is permutation equivariant.

use ndarray::{s, Array2, Array3};
use rand::Rng;

use super::linear::Linear;
use super::params::{uniform_init, ParamId, ParamStore};
use super::tape::{Mat, Tape, Var};
use crate::error::{MilError, Result};

pub const MASK_BIAS: f64 = -1e9;

/// Plain-data parameters of one encoder layer. Projection weights are
/// stored input-major (`in×out`), biases and norm parameters as `1×width`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub n_heads: usize,
    pub model_width: usize,
    pub mlp_width: usize,
    pub wq: Mat,
    pub bq: Mat,
    pub wk: Mat,
    pub bk: Mat,
    pub wv: Mat,
    pub bv: Mat,
    pub wo: Mat,
    pub bo: Mat,
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
    pub ln1_gamma: Mat,
    pub ln1_beta: Mat,
    pub ln2_gamma: Mat,
    pub ln2_beta: Mat,
}

impl EncoderLayerParams {
    pub fn random(
        model_width: usize,
        n_heads: usize,
        mlp_width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n_heads == 0 || !model_width.is_multiple_of(n_heads) {
            return Err(MilError::InvalidConfig(format!(
                "model width {model_width} is not divisible by {n_heads} heads"
            )));
        }
        let w = model_width;
        let mut lin = |i: usize, o: usize| (uniform_init(i, o, i, rng), uniform_init(1, o, i, rng));
        let (wq, bq) = lin(w, w);
        let (wk, bk) = lin(w, w);
        let (wv, bv) = lin(w, w);
        let (wo, bo) = lin(w, w);
        let (w1, b1) = lin(w, mlp_width);
        let (w2, b2) = lin(mlp_width, w);
        Ok(EncoderLayerParams {
            n_heads,
            model_width,
            mlp_width,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            w1,
            b1,
            w2,
            b2,
            ln1_gamma: Mat::ones((1, w)),
            ln1_beta: Mat::zeros((1, w)),
            ln2_gamma: Mat::ones((1, w)),
            ln2_beta: Mat::zeros((1, w)),
        })
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    fc1: Linear,
    fc2: Linear,
    ln1: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    n_heads: usize,
    width: usize,
}

impl EncoderLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        model_width: usize,
        n_heads: usize,
        mlp_width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let p = EncoderLayerParams::random(model_width, n_heads, mlp_width, rng)?;
        Ok(Self::register(store, name, &p))
    }

    pub fn register(store: &mut ParamStore, name: &str, p: &EncoderLayerParams) -> Self {
        let mut lin = |part: &str, w: &Mat, b: &Mat| Linear {
            weight: store.add(format!("{name}.{part}.weight"), w.clone()),
            bias: Some(store.add(format!("{name}.{part}.bias"), b.clone())),
            in_dim: w.nrows(),
            out_dim: w.ncols(),
        };
        let q = lin("q", &p.wq, &p.bq);
        let k = lin("k", &p.wk, &p.bk);
        let v = lin("v", &p.wv, &p.bv);
        let o = lin("o", &p.wo, &p.bo);
        let fc1 = lin("fc1", &p.w1, &p.b1);
        let fc2 = lin("fc2", &p.w2, &p.b2);
        let ln1 = (
            store.add(format!("{name}.ln1.gamma"), p.ln1_gamma.clone()),
            store.add(format!("{name}.ln1.beta"), p.ln1_beta.clone()),
        );
        let ln2 = (
            store.add(format!("{name}.ln2.gamma"), p.ln2_gamma.clone()),
            store.add(format!("{name}.ln2.beta"), p.ln2_beta.clone()),
        );
        EncoderLayer {
            q,
            k,
            v,
            o,
            fc1,
            fc2,
            ln1,
            ln2,
            n_heads: p.n_heads,
            width: p.model_width,
        }
    }

    /// Applies the layer to one padded bag `x` (`N×width`).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        mask: &[bool],
    ) -> Result<Var> {
        let (n, w) = tape.value(x).dim();
        if w != self.width {
            return Err(MilError::Shape(format!(
                "encoder layer has width {}, input has {w}",
                self.width
            )));
        }
        if mask.len() != n {
            return Err(MilError::Shape(format!(
                "{n} instances but {} mask entries",
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(MilError::EmptyBagInSoftmax(0));
        }

        let mut bias = Mat::zeros((n, n));
        for (j, &keep) in mask.iter().enumerate() {
            if !keep {
                bias.column_mut(j).fill(MASK_BIAS);
            }
        }

        let g1 = tape.param(store, self.ln1.0);
        let b1 = tape.param(store, self.ln1.1);
        let h = tape.layer_norm(x, g1, b1);
        let q = self.q.forward(tape, store, h);
        let k = self.k.forward(tape, store, h);
        let v = self.v.forward(tape, store, h);

        let dh = w / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        for head in 0..self.n_heads {
            let qh = tape.slice_cols(q, head * dh, dh);
            let kh = tape.slice_cols(k, head * dh, dh);
            let vh = tape.slice_cols(v, head * dh, dh);
            let scores = tape.matmul_t(qh, kh);
            let scores = tape.scale(scores, scale);
            let scores = tape.add_const(scores, &bias);
            let attn = tape.softmax_rows(scores);
            heads.push(tape.matmul(attn, vh));
        }
        let mixed = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)
        };
        let attn_out = self.o.forward(tape, store, mixed);
        let x = tape.add(x, attn_out);

        let g2 = tape.param(store, self.ln2.0);
        let b2 = tape.param(store, self.ln2.1);
        let h = tape.layer_norm(x, g2, b2);
        let m = self.fc1.forward(tape, store, h);
        let m = tape.relu(m);
        let m = self.fc2.forward(tape, store, m);
        Ok(tape.add(x, m))
    }
}

/// Applies one encoder layer to a padded batch `B×N×D` with mask `B×N`.
pub fn encoder_layer(
    h: &Array3<f64>,
    params: &EncoderLayerParams,
    mask: &Array2<bool>,
) -> Result<Array3<f64>> {
    let (b, n, d) = h.dim();
    if d != params.model_width {
        return Err(MilError::Shape(format!(
            "encoder layer has width {}, input has {d}",
            params.model_width
        )));
    }
    if mask.dim() != (b, n) {
        return Err(MilError::Shape(format!(
            "mask {:?} vs input {:?}",
            mask.dim(),
            (b, n)
        )));
    }
    let mut store = ParamStore::new();
    let layer = EncoderLayer::register(&mut store, "enc", params);
    let mut out = Array3::zeros((b, n, d));
    for i in 0..b {
        let mut tape = Tape::new();
        let x = tape.leaf(h.slice(s![i, .., ..]).to_owned());
        let y = layer.forward(&mut tape, &store, x, mask.row(i).as_slice().unwrap())?;
        out.slice_mut(s![i, .., ..]).assign(tape.value(y));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer_norm_row(x: &Mat, gamma: &Mat, beta: &Mat) -> Mat {
        let c = x.ncols() as f64;
        let mean = x.sum() / c;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c;
        (x - mean) / (var + 1e-5).sqrt() * gamma + beta
    }

    #[test]
    fn single_token_is_residual_plus_value_path_plus_mlp() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = EncoderLayerParams::random(4, 2, 6, &mut rng).unwrap();
        let x = Mat::from_shape_vec((1, 4), vec![0.2, -0.7, 1.3, 0.4]).unwrap();
        // One key: attention weight is exactly 1, so MHA(h) = (h Wv + bv) Wo + bo.
        let h = layer_norm_row(&x, &p.ln1_gamma, &p.ln1_beta);
        let attn = (h.dot(&p.wv) + &p.bv).dot(&p.wo) + &p.bo;
        let x1 = &x + &attn;
        let h2 = layer_norm_row(&x1, &p.ln2_gamma, &p.ln2_beta);
        let mlp = (h2.dot(&p.w1) + &p.b1).mapv(|v| v.max(0.0)).dot(&p.w2) + &p.b2;
        let expected = &x1 + &mlp;

        let input = x.clone().into_shape_with_order((1, 1, 4)).unwrap();
        let out = encoder_layer(&input, &p, &Array2::from_elem((1, 1), true)).unwrap();
        for (a, b) in out.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(EncoderLayerParams::random(6, 4, 8, &mut rng).is_err());
        let p = EncoderLayerParams::random(4, 2, 8, &mut rng).unwrap();
        let err = encoder_layer(
            &Array3::zeros((1, 2, 3)),
            &p,
            &Array2::from_elem((1, 2), true),
        );
        assert!(matches!(err, Err(MilError::Shape(_))));
    }

    #[test]
    fn permuting_instances_permutes_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = EncoderLayerParams::random(4, 2, 8, &mut rng).unwrap();
        let h = Array3::from_shape_fn((1, 4, 4), |(_, i, j)| {
            ((i * 5 + j * 3) % 7) as f64 * 0.3 - 1.0
        });
        let perm = [2, 0, 3, 1];
        let hp = Array3::from_shape_fn((1, 4, 4), |(_, i, j)| h[[0, perm[i], j]]);
        let mask = Array2::from_elem((1, 4), true);
        let y = encoder_layer(&h, &p, &mask).unwrap();
        let yp = encoder_layer(&hp, &p, &mask).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((yp[[0, i, j]] - y[[0, perm[i], j]]).abs() < 1e-12);
            }
        }
    }
}
