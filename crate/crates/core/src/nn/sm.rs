//! Graph smoothing: `g₀ = f`, `gₜ₊₁ = (1-α) f + α Ā gₜ`, with `Ā` the
//! row-normalized adjacency. Returns `g_T`.

use serde::{Deserialize, Serialize};

use super::tape::{Mat, Tape, Var};
use crate::bagdata::{normalize_adjacency, Adjacency, NormMode};
use crate::error::{MilError, Result};

pub const DEFAULT_SM_ALPHA: f64 = 0.5;
pub const DEFAULT_SM_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmParams {
    pub alpha: f64,
    pub steps: usize,
}

impl Default for SmParams {
    fn default() -> Self {
        SmParams {
            alpha: DEFAULT_SM_ALPHA,
            steps: DEFAULT_SM_STEPS,
        }
    }
}

impl SmParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(MilError::InvalidConfig(format!(
                "sm alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if self.steps == 0 {
            return Err(MilError::InvalidConfig(
                "sm steps must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Row-normalized adjacency as a dense `m×m` matrix (`m ≥ adj.n()`), with
/// padding rows and columns zero.
pub fn row_normalized_dense(adj: &Adjacency, m: usize) -> Result<Mat> {
    Ok(normalize_adjacency(adj, NormMode::Row)?.to_dense_padded(m))
}

/// Smooths `f` (`N×C`) over a dense row-normalized operator `a_row` (`N×N`).
pub fn sm_apply(tape: &mut Tape, f: Var, a_row: &Mat, params: &SmParams) -> Var {
    let mut g = f;
    if params.alpha == 0.0 {
        return g;
    }
    let keep = tape.scale(f, 1.0 - params.alpha);
    for _ in 0..params.steps {
        let spread = tape.left_const(a_row, g);
        let spread = tape.scale(spread, params.alpha);
        g = tape.add(keep, spread);
    }
    g
}

pub fn sm_operator(f: &Mat, adj: &Adjacency, params: &SmParams) -> Result<Mat> {
    params.validate()?;
    if adj.n() != f.nrows() {
        return Err(MilError::Shape(format!(
            "signal has {} rows, adjacency has {} nodes",
            f.nrows(),
            adj.n()
        )));
    }
    let a = row_normalized_dense(adj, adj.n())?;
    let mut tape = Tape::new();
    let fv = tape.leaf(f.clone());
    let g = sm_apply(&mut tape, fv, &a, params);
    Ok(tape.value(g).clone())
}
