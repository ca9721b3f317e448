use ndarray::Array2;

use super::tape::Tape;
use crate::error::Result;

/// Softmax of each row over its unmasked entries. Masked entries are
/// exactly 0; every row needs at least one unmasked entry.
pub fn masked_softmax(logits: &Array2<f64>, mask: &Array2<bool>) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let x = tape.leaf(logits.clone());
    let y = tape.masked_softmax_rows(x, mask)?;
    Ok(tape.value(y).clone())
}
