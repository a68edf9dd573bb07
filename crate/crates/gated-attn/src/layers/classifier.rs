//! Classifier head: one affine map from the context vector to class logits,
//! normalized by a shift-invariant softmax.

use crate::autodiff::{Tape, Tensor};
use crate::stochastic::SeededRng;

use super::uniform_leaf;

pub struct ClassifierHead {
    /// classes × context_dim.
    pub w: Tensor,
    pub b: Tensor,
    pub classes: usize,
}

impl ClassifierHead {
    pub fn new(context_dim: usize, classes: usize, rng: &mut SeededRng) -> ClassifierHead {
        assert!(classes >= 2, "classifier needs at least two classes");
        ClassifierHead {
            w: uniform_leaf(rng, &[classes, context_dim]),
            b: uniform_leaf(rng, &[classes]),
            classes,
        }
    }

    pub fn params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w"), self.w.clone()),
            (format!("{prefix}.b"), self.b.clone()),
        ]
    }

    /// Context [B×D] → class probabilities [B×K], each row summing to 1.
    pub fn classify(&self, tape: &Tape, context: &Tensor) -> Tensor {
        let logits = tape.add(&tape.matmul_t(context, &self.w), &self.b);
        softmax_rows(tape, &logits)
    }
}

/// Row softmax with a detached max shift; the shift cancels exactly, so
/// treating it as a constant leaves gradients unchanged.
pub fn softmax_rows(tape: &Tape, logits: &Tensor) -> Tensor {
    let shape = logits.shape();
    let cols = shape[shape.len() - 1];
    let rows = logits.len() / cols;
    let maxes: Vec<f64> = {
        let d = logits.data();
        (0..rows)
            .map(|r| d[r * cols..(r + 1) * cols].iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    };
    let z = tape.exp(&tape.row_sub(logits, &Tensor::new(maxes, &[rows])));
    let denom = tape.row_sum(&z);
    tape.row_div(&z, &denom)
}
