//! Auxiliary networks that emit per-position gate probabilities
//! p_t = sigmoid(U h'_t). Three bodies produce h'_t from the shared word
//! embeddings: a 1-layer BiLSTM, a per-position feed-forward layer, or a
//! single-head scaled dot-product self-attention layer. Padded positions are
//! forced to p_t = 0 so they can never be gated open.

use crate::autodiff::{Tape, Tensor};
use crate::data::SequenceBatch;
use crate::error::{GaError, Result};
use crate::stochastic::SeededRng;

use super::lstm::BiLstm;
use super::uniform_leaf;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuxVariant {
    Lstm,
    Ffn,
    SelfAttention,
}

impl std::str::FromStr for AuxVariant {
    type Err = GaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(AuxVariant::Lstm),
            "ffn" => Ok(AuxVariant::Ffn),
            "self_attention" => Ok(AuxVariant::SelfAttention),
            other => Err(GaError::Config(format!(
                "aux variant must be lstm, ffn, or self_attention, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for AuxVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AuxVariant::Lstm => "lstm",
            AuxVariant::Ffn => "ffn",
            AuxVariant::SelfAttention => "self_attention",
        })
    }
}

enum AuxBody {
    Lstm(BiLstm),
    Ffn { w: Tensor, b: Tensor },
    SelfAttn { wq: Tensor, wk: Tensor, wv: Tensor },
}

pub struct AuxNetwork {
    body: AuxBody,
    /// Projection from h'_t to the scalar gate logit.
    pub u: Tensor,
    pub variant: AuxVariant,
    pub hidden_dim: usize,
}

impl AuxNetwork {
    pub fn new(
        variant: AuxVariant,
        embed_dim: usize,
        hidden_dim: usize,
        rng: &mut SeededRng,
    ) -> AuxNetwork {
        let (body, out_dim) = match variant {
            AuxVariant::Lstm => (
                AuxBody::Lstm(BiLstm::new(embed_dim, hidden_dim, 1, rng)),
                2 * hidden_dim,
            ),
            AuxVariant::Ffn => (
                AuxBody::Ffn {
                    w: uniform_leaf(rng, &[hidden_dim, embed_dim]),
                    b: uniform_leaf(rng, &[hidden_dim]),
                },
                hidden_dim,
            ),
            AuxVariant::SelfAttention => (
                AuxBody::SelfAttn {
                    wq: uniform_leaf(rng, &[embed_dim, hidden_dim]),
                    wk: uniform_leaf(rng, &[embed_dim, hidden_dim]),
                    wv: uniform_leaf(rng, &[embed_dim, hidden_dim]),
                },
                hidden_dim,
            ),
        };
        AuxNetwork {
            body,
            u: uniform_leaf(rng, &[out_dim, 1]),
            variant,
            hidden_dim,
        }
    }

    pub fn params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = match &self.body {
            AuxBody::Lstm(enc) => enc.params(&format!("{prefix}.lstm")),
            AuxBody::Ffn { w, b } => vec![
                (format!("{prefix}.ffn.w"), w.clone()),
                (format!("{prefix}.ffn.b"), b.clone()),
            ],
            AuxBody::SelfAttn { wq, wk, wv } => vec![
                (format!("{prefix}.attn.wq"), wq.clone()),
                (format!("{prefix}.attn.wk"), wk.clone()),
                (format!("{prefix}.attn.wv"), wv.clone()),
            ],
        };
        out.push((format!("{prefix}.u"), self.u.clone()));
        out
    }

    /// Gate probabilities [B×T]: sigmoid(U h'_t) at valid positions, exact 0
    /// at padding.
    pub fn probabilities(
        &self,
        tape: &Tape,
        embeddings: &Tensor,
        batch: &SequenceBatch,
    ) -> Result<Tensor> {
        let (b, t) = (batch.b, batch.t_max);
        let hidden = match &self.body {
            AuxBody::Lstm(enc) => enc.encode(tape, embeddings, batch)?.states,
            AuxBody::Ffn { w, b: bias } => {
                let e = embeddings.shape()[2];
                let flat = tape.reshape(embeddings, &[b * t, e]);
                let h = tape.tanh(&tape.add(&tape.matmul_t(&flat, w), bias));
                tape.reshape(&h, &[b, t, self.hidden_dim])
            }
            AuxBody::SelfAttn { wq, wk, wv } => {
                self.self_attend(tape, embeddings, batch, wq, wk, wv)
            }
        };
        let d = hidden.shape()[2];
        let flat = tape.reshape(&hidden, &[b * t, d]);
        let logits = tape.reshape(&tape.matmul(&flat, &self.u), &[b * t]);
        let p = tape.sigmoid(&logits);
        let masked = tape.mul(&p, &batch.mask_rows());
        Ok(tape.reshape(&masked, &[b, t]))
    }

    fn self_attend(
        &self,
        tape: &Tape,
        embeddings: &Tensor,
        batch: &SequenceBatch,
        wq: &Tensor,
        wk: &Tensor,
        wv: &Tensor,
    ) -> Tensor {
        let (b, t) = (batch.b, batch.t_max);
        let e = embeddings.shape()[2];
        let a = self.hidden_dim;
        let scale = 1.0 / (a as f64).sqrt();
        let mut per_example = Vec::with_capacity(b);
        for bi in 0..b {
            let x = tape.reshape(&tape.narrow(embeddings, 0, bi, 1), &[t, e]);
            let q = tape.matmul(&x, wq);
            let k = tape.matmul(&x, wk);
            let v = tape.matmul(&x, wv);
            let scores = tape.mul_scalar(&tape.matmul_t(&q, &k), scale);
            let alpha = masked_key_softmax(tape, &scores, &batch.mask[bi * t..(bi + 1) * t]);
            per_example.push(tape.reshape(&tape.matmul(&alpha, &v), &[1, t, a]));
        }
        let refs: Vec<&Tensor> = per_example.iter().collect();
        tape.concat(&refs, 0)
    }
}

/// Softmax of each score row over the open key positions; closed keys get
/// exactly zero weight. Row maxima are detached constants, which the softmax
/// value is invariant to.
fn masked_key_softmax(tape: &Tape, scores: &Tensor, key_mask: &[f64]) -> Tensor {
    let t = key_mask.len();
    let maxes: Vec<f64> = {
        let d = scores.data();
        (0..t)
            .map(|r| {
                let row = &d[r * t..(r + 1) * t];
                row.iter()
                    .zip(key_mask)
                    .filter(|(_, &m)| m > 0.0)
                    .map(|(&s, _)| s)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    };
    let shifted = tape.row_sub(scores, &Tensor::new(maxes, &[t]));
    let z = tape.mul(&tape.exp(&shifted), &Tensor::new(key_mask.to_vec(), &[t]));
    let denom = tape.row_sum(&z);
    tape.row_div(&z, &denom)
}
