//! Joint objective: cross-entropy plus a length-normalized L1 penalty on the
//! relaxed gates, averaged over the batch.

use crate::autodiff::{Tape, Tensor};
use crate::data::SequenceBatch;
use crate::error::{GaError, Result};

pub const LOG_FLOOR: f64 = 1e-12;

/// loss = mean_b [ −log ŷ_b[y_b] + λ · ‖g_b‖₁ / len_b ]
///
/// The L1 term sums the relaxed gate values over valid positions only; each
/// example is normalized by its own length so short and long sequences pay
/// comparable sparsity rents.
pub fn joint_loss(
    tape: &Tape,
    probs: &Tensor,
    gate_soft: Option<&Tensor>,
    batch: &SequenceBatch,
    lambda: f64,
) -> Result<Tensor> {
    let k = probs.shape()[1];
    let mut hot = vec![0.0; batch.b * k];
    for (bi, &label) in batch.labels.iter().enumerate() {
        if label >= k {
            return Err(GaError::contract(format!(
                "label {label} out of range for {k} classes"
            )));
        }
        hot[bi * k + label] = 1.0;
    }
    let onehot = Tensor::new(hot, &[batch.b, k]);
    let picked = tape.row_sum(&tape.mul(probs, &onehot));
    let mut per_example = tape.neg(&tape.log(&tape.clamp(&picked, LOG_FLOOR, 1.0)));
    if let Some(gates) = gate_soft {
        if lambda != 0.0 {
            let masked = tape.mul(gates, &batch.mask2());
            let inv_len = Tensor::new(
                batch.lengths.iter().map(|&l| 1.0 / l as f64).collect(),
                &[batch.b],
            );
            let reg = tape.mul_scalar(&tape.mul(&tape.row_sum(&masked), &inv_len), lambda);
            per_example = tape.add(&per_example, &reg);
        }
    }
    Ok(tape.mean_all(&per_example))
}
