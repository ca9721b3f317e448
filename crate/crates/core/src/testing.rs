//! Conformance checks shared by the test suites and usable on any
//! [`MilModel`] or building block: random bag generation, mask soundness,
//! padded-batch versus per-bag equivalence, permutation invariance and
//! finite-difference gradient checks.
//!
//! Every check returns the largest observed discrepancy; callers pick the
//! tolerance.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::bagdata::{collate, Adjacency, Bag, Batch};
use crate::error::Result;
use crate::models::{ModelConfig, ModelKind, SmConfig};
use crate::nn::{
    masked_softmax, row_normalized_dense, self_loop_normalized_dense, sm_apply, AttentionPool,
    EncoderLayer, GraphConv, Mat, ParamStore, SmParams, Tape, Var,
};
use crate::MilModel;

/// Random graph over `n` nodes: each pair is joined with probability 0.4,
/// weights uniform in `[0.1, 2)`.
pub fn random_adjacency(rng: &mut impl Rng, n: usize) -> Adjacency {
    let mut edges = Vec::new();
    let mut weights = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.4) {
                edges.push((i, j));
                weights.push(rng.random_range(0.1f32..2.0));
            }
        }
    }
    Adjacency::new(n, &edges, &weights).expect("generated graph is valid")
}

/// Bag of `n` standard-normal instances in `d` dimensions. With `extras`,
/// also instance labels, 2-D integer coordinates and a random graph.
pub fn random_bag(rng: &mut impl Rng, id: &str, n: usize, d: usize, extras: bool) -> Bag {
    let features = Array2::from_shape_simple_fn((n, d), || rng.sample::<f32, _>(StandardNormal));
    let bag = Bag::new(id, features, rng.random_range(0..2u8)).expect("valid bag");
    if !extras {
        return bag;
    }
    // negative bags hold no positive instance; positive bags at least one
    let positive = bag.label() == 1;
    let mut inst = Array1::from_shape_simple_fn(n, || (positive && rng.random_bool(0.3)) as u8);
    if positive {
        inst[rng.random_range(0..n)] = 1;
    }
    let coords = Array2::from_shape_simple_fn((n, 2), || rng.random_range(-50i64..50));
    let adj = random_adjacency(rng, n);
    bag.with_inst_labels(inst)
        .and_then(|b| b.with_coords(coords))
        .and_then(|b| b.with_adjacency(adj))
        .expect("consistent fields")
}

/// `count` bags with sizes uniform in `1..=max_n`.
pub fn random_bags(
    rng: &mut impl Rng,
    count: usize,
    d: usize,
    max_n: usize,
    extras: bool,
) -> Vec<Bag> {
    (0..count)
        .map(|i| {
            let n = rng.random_range(1..=max_n);
            random_bag(rng, &format!("bag{i}"), n, d, extras)
        })
        .collect()
}

/// One small configuration per model kind, for fast checks.
pub fn small_model_configs(in_dim: usize) -> Vec<ModelConfig> {
    ModelKind::ALL
        .iter()
        .map(|&kind| {
            let mut c = ModelConfig::new(kind.as_str(), in_dim);
            c.embed_dim = Some(8);
            match kind {
                ModelKind::MeanPool | ModelKind::MaxPool => {}
                _ => c.attention_width = Some(4),
            }
            if matches!(
                kind,
                ModelKind::TransformerAbmil | ModelKind::SmTransformerAbmil
            ) {
                c.n_encoder_layers = Some(2);
                c.n_heads = Some(2);
                c.mlp_width = Some(8);
            }
            if matches!(kind, ModelKind::SmAbmil | ModelKind::SmTransformerAbmil) {
                c.sm = Some(SmConfig {
                    steps: 3,
                    ..SmConfig::default()
                });
            }
            c
        })
        .collect()
}

fn max_abs_diff(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Largest change of any bag logit or real-instance score after padded
/// feature entries are overwritten with large random finite values.
pub fn mask_soundness_gap(model: &dyn MilModel, batch: &Batch, rng: &mut impl Rng) -> Result<f64> {
    let (logits, scores) = model.forward_with_attention(batch)?;
    let mut noisy = batch.clone();
    for ((b, j, _), v) in noisy.features.indexed_iter_mut() {
        if !batch.mask[[b, j]] {
            *v = rng.random_range(-1e3f32..1e3);
        }
    }
    let (logits2, scores2) = model.forward_with_attention(&noisy)?;
    let real = |s: &Array2<f64>| -> Vec<f64> {
        s.indexed_iter()
            .filter(|((b, j), _)| batch.mask[[*b, *j]])
            .map(|(_, &v)| v)
            .collect()
    };
    Ok(max_abs_diff(logits, logits2).max(max_abs_diff(real(&scores), real(&scores2))))
}

/// Largest difference between padded-batch outputs and the same bags run
/// one at a time (logits and real-instance scores).
pub fn batch_equivalence_gap(model: &dyn MilModel, bags: &[Bag]) -> Result<f64> {
    let (logits, scores) = model.forward_with_attention(&collate(bags)?)?;
    let mut gap: f64 = 0.0;
    for (b, bag) in bags.iter().enumerate() {
        let (l, s) = model.forward_with_attention(&collate(std::slice::from_ref(bag))?)?;
        gap = gap.max((l[0] - logits[b]).abs());
        let n = bag.n_instances();
        gap = gap.max(max_abs_diff(
            s.row(0).iter().copied(),
            scores.row(b).iter().take(n).copied(),
        ));
    }
    Ok(gap)
}

/// Change of the bag logit when the instances (and graph) are permuted.
pub fn permutation_gap(model: &dyn MilModel, bag: &Bag, rng: &mut impl Rng) -> Result<f64> {
    let mut perm: Vec<usize> = (0..bag.n_instances()).collect();
    perm.shuffle(rng);
    let a = model.forward(&collate(std::slice::from_ref(bag))?)?[0];
    let b = model.forward(&collate(&[bag.permuted(&perm)])?)?[0];
    Ok((a - b).abs())
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)` in the Frobenius norm.
pub fn relative_error(analytic: &Mat, numeric: &Mat) -> f64 {
    let norm = |m: &Mat| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    norm(&(analytic - numeric)) / norm(analytic).max(norm(numeric)).max(1e-8)
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Worst per-tensor relative error over the compared coordinates.
    pub max_rel_err: f64,
    /// Coordinates whose central difference changes with the step size
    /// without converging at the h² rate, i.e. a ReLU/max kink lies inside
    /// the stencil. They are left out of the comparison because the
    /// difference quotient is not a derivative estimate there.
    pub excluded: usize,
    pub total: usize,
}

impl GradCheck {
    fn merge(self, other: GradCheck) -> GradCheck {
        GradCheck {
            max_rel_err: self.max_rel_err.max(other.max_rel_err),
            excluded: self.excluded + other.excluded,
            total: self.total + other.total,
        }
    }

    fn empty() -> GradCheck {
        GradCheck {
            max_rel_err: 0.0,
            excluded: 0,
            total: 0,
        }
    }
}

fn compare(analytic: &Mat, x: &mut Mat, step: f64, mut f: impl FnMut(&Mat) -> f64) -> GradCheck {
    let mut quotient = |x: &mut Mat, idx: usize, h: f64| {
        let orig = x.as_slice().unwrap()[idx];
        x.as_slice_mut().unwrap()[idx] = orig + h;
        let up = f(x);
        x.as_slice_mut().unwrap()[idx] = orig - h;
        let down = f(x);
        x.as_slice_mut().unwrap()[idx] = orig;
        (up - down) / (2.0 * h)
    };
    let mut a = analytic.clone();
    let mut numeric = Mat::zeros(x.raw_dim());
    let mut excluded = 0;
    for idx in 0..x.len() {
        let coarse = quotient(x, idx, step);
        let fine = quotient(x, idx, step / 10.0);
        let d1 = (coarse - fine).abs();
        // smooth functions agree to O(step²); a kink in the stencil does not.
        // A stiff but smooth coordinate still shows the h² rate: shrinking
        // the step tenfold again cuts the difference about a hundredfold.
        let kink = d1 > 1e-6 * coarse.abs().max(fine.abs()).max(1.0) && {
            let d2 = (fine - quotient(x, idx, step / 100.0)).abs();
            !(30.0 * d2..=300.0 * d2).contains(&d1)
        };
        if kink {
            excluded += 1;
            a.as_slice_mut().unwrap()[idx] = 0.0;
        } else {
            numeric.as_slice_mut().unwrap()[idx] = coarse;
        }
    }
    GradCheck {
        max_rel_err: relative_error(&a, &numeric),
        excluded,
        total: x.len(),
    }
}

/// Compares tape gradients of the scalar `f(tape, store, x)` with central
/// differences of step `step`, for the input `x` and every parameter in
/// `store`.
pub fn block_grad_check(
    store: &ParamStore,
    input: &Mat,
    step: f64,
    f: impl Fn(&mut Tape, &ParamStore, Var) -> Result<Var>,
) -> Result<GradCheck> {
    let eval = |s: &ParamStore, x: &Mat| -> f64 {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let out = f(&mut tape, s, xv).expect("forward succeeded once");
        tape.scalar(out)
    };
    let mut tape = Tape::new();
    let xv = tape.leaf(input.clone());
    let out = f(&mut tape, store, xv)?;
    let grads = tape.backward(out);
    let mut check = compare(
        &grads.get_or_zeros(&tape, xv),
        &mut input.clone(),
        step,
        |x| eval(store, x),
    );
    for (k, analytic) in tape.param_grads(&grads, store).iter().enumerate() {
        let id = store.ids().nth(k).unwrap();
        let mut perturbed = store.clone();
        let mut value = store.get(id).clone();
        check = check.merge(compare(analytic, &mut value, step, |v| {
            *perturbed.get_mut(id) = v.clone();
            eval(&perturbed, input)
        }));
    }
    Ok(check)
}

/// Gradient check of the model's mean BCE loss on `batch` over every
/// parameter tensor. Parameters are restored afterwards.
pub fn model_grad_check(model: &mut dyn MilModel, batch: &Batch, step: f64) -> Result<GradCheck> {
    let (_, analytic) = model.loss_and_grads(batch)?;
    let mut check = GradCheck::empty();
    let ids: Vec<_> = model.params().ids().collect();
    for (id, analytic) in ids.into_iter().zip(&analytic) {
        let original = model.params().get(id).clone();
        let mut value = original.clone();
        check = check.merge(compare(analytic, &mut value, step, |v| {
            *model.params_mut().get_mut(id) = v.clone();
            model.compute_loss(batch).expect("loss").0
        }));
        *model.params_mut().get_mut(id) = original;
    }
    Ok(check)
}

fn normal(rng: &mut impl Rng, r: usize, c: usize) -> Mat {
    Array2::from_shape_simple_fn((r, c), || rng.sample(StandardNormal))
}

/// `Σ y ⊙ w` for a fixed random `w`, so every output entry matters.
fn weighted_sum(tape: &mut Tape, y: Var, w: &Mat) -> Var {
    let w = tape.leaf(w.clone());
    let p = tape.mul(y, w);
    tape.sum_all(p)
}

/// Blocks covered by [`block_mask_gaps`] and [`block_grad_checks`].
pub const BLOCKS: [&str; 5] = [
    "masked_softmax",
    "attention_pool",
    "encoder_layer",
    "graph_conv",
    "sm_operator",
];

/// For each block, the largest change of a real output when the `pad`
/// padded rows of an `(n + pad)`-row input are overwritten with values up to
/// `1e3` in magnitude. Weights and graph are drawn from `rng`.
pub fn block_mask_gaps(
    rng: &mut impl Rng,
    n: usize,
    pad: usize,
    d: usize,
) -> Result<Vec<(&'static str, f64)>> {
    let m = n + pad;
    let mask: Vec<bool> = (0..m).map(|i| i < n).collect();
    let x = normal(rng, m, d);
    let mut noisy = x.clone();
    for i in n..m {
        for j in 0..d {
            noisy[[i, j]] = rng.random_range(-1e3..1e3);
        }
    }
    let real_gap = |a: &Mat, b: &Mat| {
        max_abs_diff(
            a.rows().into_iter().take(n).flatten().copied(),
            b.rows().into_iter().take(n).flatten().copied(),
        )
    };

    let row_mask = Array2::from_shape_fn((1, m), |(_, j)| mask[j]);
    let softmax = |v: &Mat| {
        masked_softmax(
            &v.column(0).to_owned().insert_axis(ndarray::Axis(0)),
            &row_mask,
        )
    };
    let softmax_gap = max_abs_diff(
        softmax(&x)?.iter().copied(),
        softmax(&noisy)?.iter().copied(),
    );

    let mut store = ParamStore::new();
    let pool = AttentionPool::new(&mut store, "pool", d, 4, true, rng);
    let encoder = EncoderLayer::new(&mut store, "enc", 2 * d, 2, 6, rng)?;
    let conv = GraphConv::new(&mut store, "conv", d, 3, rng);
    let adj = random_adjacency(rng, n);
    let a_hat = self_loop_normalized_dense(&adj, m)?;
    let a_row = row_normalized_dense(&adj, m)?;
    let sm = SmParams::default();

    let run = |input: &Mat| -> Result<[Mat; 4]> {
        let mut tape = Tape::new();
        let h = tape.leaf(input.clone());
        let (z, _) = pool.forward(&mut tape, &store, h, &mask)?;
        let wide = tape.leaf(ndarray::concatenate![
            ndarray::Axis(1),
            input.view(),
            input.view()
        ]);
        let e = encoder.forward(&mut tape, &store, wide, &mask)?;
        let g = conv.forward(&mut tape, &store, h, &a_hat)?;
        let s = sm_apply(&mut tape, h, &a_row, &sm);
        Ok([z, e, g, s].map(|v| tape.value(v).clone()))
    };
    let (clean, dirty) = (run(&x)?, run(&noisy)?);
    Ok(vec![
        (BLOCKS[0], softmax_gap),
        (
            BLOCKS[1],
            max_abs_diff(clean[0].iter().copied(), dirty[0].iter().copied()),
        ),
        (BLOCKS[2], real_gap(&clean[1], &dirty[1])),
        (BLOCKS[3], real_gap(&clean[2], &dirty[2])),
        (BLOCKS[4], real_gap(&clean[3], &dirty[3])),
    ])
}

/// Finite-difference checks of every block except the softmax (whose
/// gradient is covered through the attention pool) on an `n×d` input
/// with one padded row.
pub fn block_grad_checks(
    rng: &mut impl Rng,
    n: usize,
    d: usize,
    step: f64,
) -> Result<Vec<(&'static str, GradCheck)>> {
    let m = n + 1;
    let mask: Vec<bool> = (0..m).map(|i| i < n).collect();
    let keep = Array2::from_shape_fn((m, 1), |(i, _)| (i < n) as u8 as f64);
    let mut out = Vec::new();

    let mut store = ParamStore::new();
    let pool = AttentionPool::new(&mut store, "pool", d, 3, true, rng);
    let (x, w) = (normal(rng, m, d), normal(rng, 1, d));
    let check = block_grad_check(&store, &x, step, |tape, s, h| {
        let (z, _) = pool.forward(tape, s, h, &mask)?;
        Ok(weighted_sum(tape, z, &w))
    })?;
    out.push((BLOCKS[1], check));

    let width = 2 * d.div_ceil(2);
    let mut store = ParamStore::new();
    let encoder = EncoderLayer::new(&mut store, "enc", width, 2, 5, rng)?;
    let (x, w) = (normal(rng, m, width), normal(rng, m, width) * &keep);
    let check = block_grad_check(&store, &x, step, |tape, s, h| {
        let y = encoder.forward(tape, s, h, &mask)?;
        Ok(weighted_sum(tape, y, &w))
    })?;
    out.push((BLOCKS[2], check));

    let adj = random_adjacency(rng, n);
    let mut store = ParamStore::new();
    let conv = GraphConv::new(&mut store, "conv", d, 3, rng);
    let a_hat = self_loop_normalized_dense(&adj, m)?;
    let (x, w) = (normal(rng, m, d), normal(rng, m, 3) * &keep);
    let check = block_grad_check(&store, &x, step, |tape, s, h| {
        let y = conv.forward(tape, s, h, &a_hat)?;
        Ok(weighted_sum(tape, y, &w))
    })?;
    out.push((BLOCKS[3], check));

    let a_row = row_normalized_dense(&adj, m)?;
    let sm = SmParams {
        alpha: rng.random_range(0.0..=1.0),
        steps: rng.random_range(1..=10),
    };
    let (x, w) = (normal(rng, m, d), normal(rng, m, d) * &keep);
    let check = block_grad_check(&ParamStore::new(), &x, step, |tape, _, h| {
        let g = sm_apply(tape, h, &a_row, &sm);
        Ok(weighted_sum(tape, g, &w))
    })?;
    out.push((BLOCKS[4], check));
    Ok(out)
}
