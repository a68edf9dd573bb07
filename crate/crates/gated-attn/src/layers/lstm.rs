//! LSTM cell and the bidirectional multi-layer encoder.
//!
//! Gate weights are stacked column-wise as [input, forget, candidate, output]
//! so each step costs two matmuls. Steps at padded positions multiply both
//! states by the 0/1 mask, which keeps padding inert in both directions:
//! padding is always a suffix, so zeroed states never precede valid ones in
//! the forward pass and enter the backward pass as a fresh zero state.

use crate::autodiff::{Tape, Tensor};
use crate::data::SequenceBatch;
use crate::error::{GaError, Result};
use crate::stochastic::SeededRng;

use super::uniform_leaf;

pub struct LstmCell {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub bias: Tensor,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCell {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut SeededRng) -> LstmCell {
        let w_x = uniform_leaf(rng, &[input_dim, 4 * hidden_dim]);
        let w_h = uniform_leaf(rng, &[hidden_dim, 4 * hidden_dim]);
        let bias = uniform_leaf(rng, &[4 * hidden_dim]);
        {
            // forget-gate bias starts at 1.0 so early training keeps memory
            let mut b = bias.data_mut();
            for v in &mut b[hidden_dim..2 * hidden_dim] {
                *v = 1.0;
            }
        }
        LstmCell {
            w_x,
            w_h,
            bias,
            input_dim,
            hidden_dim,
        }
    }

    pub fn params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.w_x"), self.w_x.clone()),
            (format!("{prefix}.w_h"), self.w_h.clone()),
            (format!("{prefix}.bias"), self.bias.clone()),
        ]
    }

    /// One recurrence step for a batch: x [B×I], h/c [B×H] → (h', c').
    pub fn step(&self, tape: &Tape, x: &Tensor, h: &Tensor, c: &Tensor) -> (Tensor, Tensor) {
        let hd = self.hidden_dim;
        let z = tape.add(
            &tape.add(&tape.matmul(x, &self.w_x), &tape.matmul(h, &self.w_h)),
            &self.bias,
        );
        let i = tape.sigmoid(&tape.narrow(&z, 1, 0, hd));
        let f = tape.sigmoid(&tape.narrow(&z, 1, hd, hd));
        let g = tape.tanh(&tape.narrow(&z, 1, 2 * hd, hd));
        let o = tape.sigmoid(&tape.narrow(&z, 1, 3 * hd, hd));
        let c_next = tape.add(&tape.mul(&f, c), &tape.mul(&i, &g));
        let h_next = tape.mul(&o, &tape.tanh(&c_next));
        (h_next, c_next)
    }
}

pub struct EncodeOut {
    /// Top-layer states, B×T×2H.
    pub states: Tensor,
    /// Concatenation of the forward state at each example's last valid step
    /// and the backward state at step 0; B×2H.
    pub h_last: Tensor,
}

pub struct BiLstm {
    pub layers: Vec<(LstmCell, LstmCell)>,
    pub hidden_dim: usize,
}

impl BiLstm {
    pub fn new(input_dim: usize, hidden_dim: usize, layers: usize, rng: &mut SeededRng) -> BiLstm {
        assert!(layers >= 1, "encoder needs at least one layer");
        let mut out = Vec::with_capacity(layers);
        for l in 0..layers {
            let in_dim = if l == 0 { input_dim } else { 2 * hidden_dim };
            out.push((
                LstmCell::new(in_dim, hidden_dim, rng),
                LstmCell::new(in_dim, hidden_dim, rng),
            ));
        }
        BiLstm {
            layers: out,
            hidden_dim,
        }
    }

    pub fn params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (l, (fwd, bwd)) in self.layers.iter().enumerate() {
            out.extend(fwd.params(&format!("{prefix}.l{l}.fwd")));
            out.extend(bwd.params(&format!("{prefix}.l{l}.bwd")));
        }
        out
    }

    /// Encodes embedded inputs [B×T×I] into top-layer states [B×T×2H].
    pub fn encode(&self, tape: &Tape, input: &Tensor, batch: &SequenceBatch) -> Result<EncodeOut> {
        let (b, t_max) = (batch.b, batch.t_max);
        if batch.lengths.contains(&0) {
            return Err(GaError::contract("cannot encode a zero-length sequence"));
        }
        let hd = self.hidden_dim;
        let step_masks: Vec<Tensor> = (0..t_max).map(|t| batch.step_mask(t)).collect();

        let mut layer_in = input.clone();
        let mut f_stack = Tensor::zeros(&[0]);
        let mut b_stack = Tensor::zeros(&[0]);
        for (fwd, bwd) in &self.layers {
            let in_dim = fwd.input_dim;
            let xs: Vec<Tensor> = (0..t_max)
                .map(|t| tape.reshape(&tape.narrow(&layer_in, 1, t, 1), &[b, in_dim]))
                .collect();

            let mut h = Tensor::zeros(&[b, hd]);
            let mut c = Tensor::zeros(&[b, hd]);
            let mut f_steps = Vec::with_capacity(t_max);
            for t in 0..t_max {
                let (hn, cn) = fwd.step(tape, &xs[t], &h, &c);
                h = tape.row_mul(&hn, &step_masks[t]);
                c = tape.row_mul(&cn, &step_masks[t]);
                f_steps.push(tape.reshape(&h, &[b, 1, hd]));
            }

            let mut h = Tensor::zeros(&[b, hd]);
            let mut c = Tensor::zeros(&[b, hd]);
            let mut b_steps = vec![Tensor::zeros(&[0]); t_max];
            for t in (0..t_max).rev() {
                let (hn, cn) = bwd.step(tape, &xs[t], &h, &c);
                h = tape.row_mul(&hn, &step_masks[t]);
                c = tape.row_mul(&cn, &step_masks[t]);
                b_steps[t] = tape.reshape(&h, &[b, 1, hd]);
            }

            let f_refs: Vec<&Tensor> = f_steps.iter().collect();
            let b_refs: Vec<&Tensor> = b_steps.iter().collect();
            f_stack = tape.concat(&f_refs, 1);
            b_stack = tape.concat(&b_refs, 1);
            layer_in = tape.concat(&[&f_stack, &b_stack], 2);
        }

        // forward state at t = len−1, picked out with a one-hot weighting
        let mut last_onehot = vec![0.0; b * t_max];
        for (bi, &len) in batch.lengths.iter().enumerate() {
            last_onehot[bi * t_max + (len - 1)] = 1.0;
        }
        let h_last_f = tape.attend(&f_stack, &Tensor::new(last_onehot, &[b, t_max]));
        let h_last_b = tape.reshape(&tape.narrow(&b_stack, 1, 0, 1), &[b, hd]);
        let h_last = tape.concat(&[&h_last_f, &h_last_b], 1);

        Ok(EncodeOut {
            states: layer_in,
            h_last,
        })
    }
}
