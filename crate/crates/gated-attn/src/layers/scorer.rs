//! The attention scorer e_t = v·tanh(W h_t + b) and the local-attention
//! position predictor, which shares the same one-hidden-layer shape but
//! squashes its output through a sigmoid to a fraction of the sequence.

use crate::autodiff::{Tape, Tensor};
use crate::stochastic::SeededRng;

use super::uniform_leaf;

pub struct ScoreMlp {
    /// hidden × input.
    pub w: Tensor,
    pub b: Tensor,
    pub v: Tensor,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl ScoreMlp {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut SeededRng) -> ScoreMlp {
        ScoreMlp {
            w: uniform_leaf(rng, &[hidden_dim, input_dim]),
            b: uniform_leaf(rng, &[hidden_dim]),
            v: uniform_leaf(rng, &[hidden_dim, 1]),
            input_dim,
            hidden_dim,
        }
    }

    pub fn params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w"), self.w.clone()),
            (format!("{prefix}.b"), self.b.clone()),
            (format!("{prefix}.v"), self.v.clone()),
        ]
    }

    /// Scores a stack of position rows [N×input] → [N] scalars.
    pub fn score_rows(&self, tape: &Tape, rows: &Tensor) -> Tensor {
        let n = rows.shape()[0];
        let hidden = tape.tanh(&tape.add(&tape.matmul_t(rows, &self.w), &self.b));
        tape.reshape(&tape.matmul(&hidden, &self.v), &[n])
    }

    /// Scores every position of [B×T×D] → [B×T].
    pub fn score_states(&self, tape: &Tape, states: &Tensor) -> Tensor {
        let s = states.shape();
        let (b, t, d) = (s[0], s[1], s[2]);
        let flat = tape.reshape(states, &[b * t, d]);
        tape.reshape(&self.score_rows(tape, &flat), &[b, t])
    }
}

/// Predicts the local-attention center as a fraction of each example's valid
/// length: p_frac = sigmoid(v·tanh(W h_last + b)).
pub struct PositionPredictor {
    pub mlp: ScoreMlp,
}

impl PositionPredictor {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut SeededRng) -> PositionPredictor {
        PositionPredictor {
            mlp: ScoreMlp::new(input_dim, hidden_dim, rng),
        }
    }

    pub fn params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.mlp.params(prefix)
    }

    /// h_last [B×D] → center positions [B] in (0, length) per example.
    pub fn centers(&self, tape: &Tape, h_last: &Tensor, lengths: &[usize]) -> Tensor {
        let frac = tape.sigmoid(&self.mlp.score_rows(tape, h_last));
        let lens = Tensor::new(lengths.iter().map(|&l| l as f64).collect(), &[lengths.len()]);
        tape.mul(&frac, &lens)
    }
}
