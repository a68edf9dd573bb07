//! Model layers: embedding lookup, LSTM cells, the bidirectional encoder,
//! the attention scorer MLP, auxiliary gate-probability networks, and the
//! classifier head.

pub mod aux_net;
pub mod classifier;
pub mod embedding;
pub mod lstm;
pub mod scorer;

pub use aux_net::{AuxNetwork, AuxVariant};
pub use classifier::{softmax_rows, ClassifierHead};
pub use embedding::Embedding;
pub use lstm::{BiLstm, EncodeOut, LstmCell};
pub use scorer::{PositionPredictor, ScoreMlp};

use crate::autodiff::Tensor;
use crate::stochastic::SeededRng;

pub(crate) const INIT_RANGE: f64 = 0.08;

pub(crate) fn uniform_leaf(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::requires_grad(
        (0..n).map(|_| rng.range_f64(-INIT_RANGE, INIT_RANGE)).collect(),
        shape,
    )
}
