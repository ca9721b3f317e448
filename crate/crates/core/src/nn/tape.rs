//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Calling
//! [`Tape::backward`] on a `1×1` result walks the record in reverse and
//! returns the gradient of that scalar with respect to every node.

use ndarray::{s, Array2, Axis};

use super::params::{ParamId, ParamStore};
use crate::error::{MilError, Result};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + 1·b` with `b` a single row.
    AddRow(Var, Var),
    Scale(Var, f64),
    /// Adds a constant; the constant itself is not kept.
    Shift(Var),
    /// Constant matrix on the left: `C · a`.
    LeftConst(Mat, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MaskedMeanRows(Var, Vec<bool>),
    /// Row index of the maximum in each column.
    MaskedMaxRows(Var, Vec<usize>),
    SumAll(Var),
    BceWithLogits(Var, Vec<f64>),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, zeros if the output does not depend on it.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Mat {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(tape.value(v).raw_dim()))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
}

const LN_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a parameter as a leaf, once per tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let i = id.index();
        if self.bound.len() <= i {
            self.bound.resize(i + 1, None);
        }
        if let Some(v) = self.bound[i] {
            return v;
        }
        let v = self.leaf(store.get(id).clone());
        self.bound[i] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a single row");
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: &Mat) -> Var {
        let value = self.value(a) + c;
        self.push(value, Op::Shift(a))
    }

    pub fn left_const(&mut self, c: &Mat, a: Var) -> Var {
        let value = c.dot(self.value(a));
        self.push(value, Op::LeftConst(c.clone(), a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Row-wise softmax restricted to entries where `mask` is true; masked
    /// entries come out exactly 0, as if their logits were `-∞`.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: &Array2<bool>) -> Result<Var> {
        let x = self.value(a);
        if x.dim() != mask.dim() {
            return Err(MilError::Shape(format!(
                "logits {:?} vs mask {:?}",
                x.dim(),
                mask.dim()
            )));
        }
        let mut value = Mat::zeros(x.raw_dim());
        for (r, (xr, mr)) in x.rows().into_iter().zip(mask.rows()).enumerate() {
            let m = xr
                .iter()
                .zip(mr)
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                return Err(MilError::EmptyBagInSoftmax(r));
            }
            let mut z = 0.0;
            for c in 0..xr.len() {
                if mr[c] {
                    let e = (xr[c] - m).exp();
                    value[[r, c]] = e;
                    z += e;
                }
            }
            value.row_mut(r).mapv_inplace(|e| e / z);
        }
        // Backward is identical to the dense softmax: masked outputs are 0.
        Ok(self.push(value, Op::SoftmaxRows(a)))
    }

    /// Per-row layer normalization with learned `1×C` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let c = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / c;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + width]).to_owned();
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("column counts agree");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    /// Column means over the rows where `mask` is true, `1×C`.
    pub fn masked_mean_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let x = self.value(a);
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(MilError::EmptyBagInSoftmax(0));
        }
        let mut value = Mat::zeros((1, x.ncols()));
        for (row, _) in x.rows().into_iter().zip(mask).filter(|(_, &m)| m) {
            value.row_mut(0).scaled_add(1.0, &row);
        }
        value /= count as f64;
        Ok(self.push(value, Op::MaskedMeanRows(a, mask.to_vec())))
    }

    /// Column maxima over the rows where `mask` is true, `1×C`.
    pub fn masked_max_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let x = self.value(a);
        let mut value = Mat::zeros((1, x.ncols()));
        let mut arg = Vec::with_capacity(x.ncols());
        for (c, col) in x.columns().into_iter().enumerate() {
            let best = col
                .iter()
                .zip(mask)
                .enumerate()
                .filter(|(_, (_, &m))| m)
                .fold(None, |acc: Option<(usize, f64)>, (i, (&v, _))| match acc {
                    Some((_, bv)) if bv >= v => acc,
                    _ => Some((i, v)),
                })
                .ok_or(MilError::EmptyBagInSoftmax(0))?;
            value[[0, c]] = best.1;
            arg.push(best.0);
        }
        Ok(self.push(value, Op::MaskedMaxRows(a, arg)))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    /// Mean binary cross-entropy with logits over every entry of `logits`,
    /// computed in the overflow-safe form `max(x,0) - x·y + ln(1 + e^-|x|)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.len(), targets.len(), "one target per logit");
        let total: f64 = x
            .iter()
            .zip(targets)
            .map(|(&x, &y)| bce_with_logits(x, y))
            .sum();
        let value = Mat::from_elem((1, 1), total / targets.len() as f64);
        self.push(value, Op::BceWithLogits(logits, targets.to_vec()))
    }

    /// Gradients of the scalar `root` with respect to every recorded node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.value(root).dim(),
            (1, 1),
            "backward needs a scalar root"
        );
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Mat::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, -&g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * self.value(*b));
                    acc(&mut grads, *b, &g * self.value(*a));
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g.clone());
                }
                Op::Scale(a, c) => acc(&mut grads, *a, &g * *c),
                Op::Shift(a) => acc(&mut grads, *a, g.clone()),
                Op::LeftConst(c, a) => acc(&mut grads, *a, c.t().dot(&g)),
                Op::Tanh(a) => acc(&mut grads, *a, &g * &y.mapv(|t| 1.0 - t * t)),
                Op::Sigmoid(a) => acc(&mut grads, *a, &g * &y.mapv(|s| s * (1.0 - s))),
                Op::Relu(a) => {
                    let mut ga = g.clone();
                    ga.zip_mut_with(y, |gv, &yv| {
                        if yv <= 0.0 {
                            *gv = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::SoftmaxRows(a) => {
                    let mut ga = Mat::zeros(y.raw_dim());
                    for ((mut gr, yr), gor) in ga.rows_mut().into_iter().zip(y.rows()).zip(g.rows())
                    {
                        let dotp = yr.dot(&gor);
                        for c in 0..yr.len() {
                            gr[c] = yr[c] * (gor[c] - dotp);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    acc(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(
                        &mut grads,
                        *gamma,
                        (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                    let gxhat = &g * self.value(*gamma);
                    let c = xhat.ncols() as f64;
                    let mut gx = Mat::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let gr = gxhat.row(r);
                        let xr = xhat.row(r);
                        let sum_g = gr.sum();
                        let sum_gx = gr.dot(&xr);
                        for k in 0..xhat.ncols() {
                            gx[[r, k]] = inv_std[r] / c * (c * gr[k] - sum_g - xr[k] * sum_gx);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Mat::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        acc(&mut grads, p, g.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::MaskedMeanRows(a, mask) => {
                    let count = mask.iter().filter(|&&m| m).count() as f64;
                    let mut ga = Mat::zeros(self.value(*a).raw_dim());
                    for (mut row, _) in ga.rows_mut().into_iter().zip(mask).filter(|(_, &m)| m) {
                        row.scaled_add(1.0 / count, &g.row(0));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::MaskedMaxRows(a, arg) => {
                    let mut ga = Mat::zeros(self.value(*a).raw_dim());
                    for (c, &r) in arg.iter().enumerate() {
                        ga[[r, c]] += g[[0, c]];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let ga = Mat::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::BceWithLogits(a, targets) => {
                    let x = self.value(*a);
                    let n = targets.len() as f64;
                    let mut ga = Mat::zeros(x.raw_dim());
                    for ((gv, &xv), &t) in ga.iter_mut().zip(x.iter()).zip(targets) {
                        *gv = g[[0, 0]] * (sigmoid(xv) - t) / n;
                    }
                    acc(&mut grads, *a, ga);
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    /// Gradient for every parameter in `store`, zeros for unused ones.
    pub fn param_grads(&self, grads: &Gradients, store: &ParamStore) -> Vec<Mat> {
        store
            .ids()
            .map(|id| {
                self.bound
                    .get(id.index())
                    .copied()
                    .flatten()
                    .and_then(|v| grads.get(v).cloned())
                    .unwrap_or_else(|| Mat::zeros(store.get(id).raw_dim()))
            })
            .collect()
    }
}

fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn bce_with_logits(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}
