//! Full sequence classifier: embedding, BiLSTM encoder, one of three
//! aggregation mechanisms, and a softmax head. The gated mechanism adds an
//! auxiliary network whose per-position probabilities drive relaxed gates in
//! training and hard open/close decisions at test time.

use crate::attention::{
    gated_attention_hard, gated_attention_soft, local_attention, soft_attention, AttentionOutput,
    LocalWindow,
};
use crate::autodiff::{Tape, Tensor};
use crate::config::{Mechanism, ModelConfig};
use crate::data::{EmbeddingTable, SequenceBatch};
use crate::error::{GaError, Result};
use crate::layers::{
    AuxNetwork, BiLstm, ClassifierHead, Embedding, PositionPredictor, ScoreMlp,
};
use crate::stochastic::{gumbel_softmax_gate, hard_gates, GateDraw, GateMode, SeededRng};

pub struct GaNet {
    pub embedding: Embedding,
    pub encoder: BiLstm,
    pub scorer: ScoreMlp,
    pub aux: Option<AuxNetwork>,
    pub predictor: Option<PositionPredictor>,
    pub head: ClassifierHead,
    pub mechanism: Mechanism,
    pub window: LocalWindow,
    pub pin_gates: bool,
}

pub struct TrainForward {
    /// Class probabilities, B×K, on the tape.
    pub probs: Tensor,
    /// Relaxed gates for the sparsity regularizer (gated mechanism only).
    pub gate_soft: Option<Tensor>,
    pub attention: AttentionOutput,
}

pub struct EvalForward {
    /// Row-major class probabilities, B×K.
    pub probs: Vec<f64>,
    pub predicted: Vec<usize>,
    /// Row-major attention weights, B×T.
    pub alpha: Vec<f64>,
    /// Effective open positions after any fallback, B×T. For the soft
    /// mechanism every valid position counts as open.
    pub gates: Vec<bool>,
    /// Auxiliary gate probabilities, B×T; empty unless gated.
    pub p: Vec<f64>,
    pub open_gates: usize,
    pub valid_positions: usize,
    pub scored_positions: usize,
    pub fallbacks: usize,
}

impl GaNet {
    /// Each component initializes from its own derived stream, so models that
    /// share a seed draw identical encoder/scorer/head weights regardless of
    /// which optional parts exist.
    pub fn new(
        cfg: &ModelConfig,
        table: &EmbeddingTable,
        classes: usize,
        rng: &SeededRng,
    ) -> Result<GaNet> {
        if classes < 2 {
            return Err(GaError::contract("a classifier needs at least 2 classes"));
        }
        if table.dim != cfg.embed_dim {
            return Err(GaError::Config(format!(
                "embedding table dim {} does not match embed_dim {}",
                table.dim, cfg.embed_dim
            )));
        }
        let d = 2 * cfg.hidden_dim;
        let embedding = Embedding::from_table(table, cfg.trainable_embeddings);
        let encoder = BiLstm::new(
            cfg.embed_dim,
            cfg.hidden_dim,
            cfg.layers,
            &mut rng.derive("init:encoder"),
        );
        let scorer = ScoreMlp::new(d, cfg.attn_hidden, &mut rng.derive("init:scorer"));
        let aux = match cfg.mechanism {
            Mechanism::Gated => Some(AuxNetwork::new(
                cfg.aux_variant,
                cfg.embed_dim,
                cfg.aux_hidden,
                &mut rng.derive("init:aux"),
            )),
            _ => None,
        };
        let predictor = match cfg.mechanism {
            Mechanism::Local => Some(PositionPredictor::new(
                d,
                cfg.attn_hidden,
                &mut rng.derive("init:predictor"),
            )),
            _ => None,
        };
        let head = ClassifierHead::new(d, classes, &mut rng.derive("init:head"));
        Ok(GaNet {
            embedding,
            encoder,
            scorer,
            aux,
            predictor,
            head,
            mechanism: cfg.mechanism,
            window: LocalWindow {
                size: cfg.window,
                sigma_infinite: cfg.sigma_infinite,
            },
            pin_gates: cfg.pin_gates,
        })
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        let mut out = self.embedding.params("embedding");
        out.extend(self.encoder.params("encoder"));
        out.extend(self.scorer.params("scorer"));
        if let Some(aux) = &self.aux {
            out.extend(aux.params("aux"));
        }
        if let Some(p) = &self.predictor {
            out.extend(p.params("predictor"));
        }
        out.extend(self.head.params("head"));
        out
    }

    /// Everything a checkpoint must carry: the trainable parameters plus the
    /// embedding table even when it is frozen.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = self.params();
        if !self.embedding.trainable {
            out.insert(
                0,
                ("embedding.table".to_string(), self.embedding.table.clone()),
            );
        }
        out
    }

    pub fn classes(&self) -> usize {
        self.head.classes
    }

    /// Training forward pass: relaxed gates, everything differentiable.
    pub fn forward_train(
        &self,
        tape: &Tape,
        batch: &SequenceBatch,
        tau: f64,
        draw: GateDraw<'_>,
    ) -> Result<TrainForward> {
        let emb = self.embedding.forward(tape, batch)?;
        let enc = self.encoder.encode(tape, &emb, batch)?;
        let (attention, gate_soft) = match self.mechanism {
            Mechanism::Soft => (soft_attention(tape, &self.scorer, &enc.states, batch)?, None),
            Mechanism::Gated => {
                let gate = if self.pin_gates {
                    // every gate pinned to exactly 1; multiplying by it is a
                    // bit-level no-op, so this run must track the soft model
                    batch.mask2()
                } else {
                    let aux = self.aux.as_ref().expect("gated model carries an aux net");
                    let p = aux.probabilities(tape, &emb, batch)?;
                    gumbel_softmax_gate(tape, &p, tau, draw)?.soft
                };
                let out =
                    gated_attention_soft(tape, &self.scorer, &enc.states, &gate, batch)?;
                (out, Some(gate))
            }
            Mechanism::Local => {
                let predictor = self
                    .predictor
                    .as_ref()
                    .expect("local model carries a position predictor");
                (
                    local_attention(
                        tape,
                        &self.scorer,
                        predictor,
                        &enc.states,
                        &enc.h_last,
                        batch,
                        self.window,
                    )?,
                    None,
                )
            }
        };
        let probs = self.head.classify(tape, &attention.context);
        Ok(TrainForward {
            probs,
            gate_soft,
            attention,
        })
    }

    /// Test-time forward pass: hard gates, no tape recording. `rng` is only
    /// consumed in `GateMode::Sample`.
    pub fn forward_eval(
        &self,
        batch: &SequenceBatch,
        mode: GateMode,
        rng: Option<&mut SeededRng>,
    ) -> Result<EvalForward> {
        let tape = Tape::inference();
        let emb = self.embedding.forward(&tape, batch)?;
        let enc = self.encoder.encode(&tape, &emb, batch)?;
        let valid_positions = batch.valid_total();
        let (out, gates, p) = match self.mechanism {
            Mechanism::Soft => {
                let out = soft_attention(&tape, &self.scorer, &enc.states, batch)?;
                let gates: Vec<bool> = batch.mask.iter().map(|&m| m > 0.0).collect();
                (out, gates, Vec::new())
            }
            Mechanism::Gated => {
                let aux = self.aux.as_ref().expect("gated model carries an aux net");
                let p_t = aux.probabilities(&tape, &emb, batch)?;
                let open = match mode {
                    GateMode::Threshold => hard_gates(&p_t, mode, &mut SeededRng::new(0))?,
                    GateMode::Sample => {
                        let rng = rng.ok_or_else(|| {
                            GaError::contract("gate_mode=sample needs a random stream")
                        })?;
                        hard_gates(&p_t, mode, rng)?
                    }
                };
                let p_vals = p_t.to_vec();
                let (out, effective) = gated_attention_hard(
                    &tape,
                    &self.scorer,
                    &enc.states,
                    &open,
                    &p_vals,
                    batch,
                )?;
                (out, effective, p_vals)
            }
            Mechanism::Local => {
                let predictor = self
                    .predictor
                    .as_ref()
                    .expect("local model carries a position predictor");
                let out = local_attention(
                    &tape,
                    &self.scorer,
                    predictor,
                    &enc.states,
                    &enc.h_last,
                    batch,
                    self.window,
                )?;
                let gates: Vec<bool> = out.alpha.to_vec().iter().map(|&a| a != 0.0).collect();
                (out, gates, Vec::new())
            }
        };
        let probs_t = self.head.classify(&tape, &out.context);
        let probs = probs_t.to_vec();
        let k = self.head.classes;
        let predicted = (0..batch.b)
            .map(|bi| {
                let row = &probs[bi * k..(bi + 1) * k];
                let mut best = 0;
                for c in 1..k {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect();
        Ok(EvalForward {
            probs,
            predicted,
            alpha: out.alpha.to_vec(),
            open_gates: gates.iter().filter(|&&g| g).count(),
            gates,
            p,
            valid_positions,
            scored_positions: out.scored_positions,
            fallbacks: out.fallbacks,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::config::RunConfig;
    use crate::data::{make_batches, random_table, EncodedExample, Vocab};
    use crate::layers::AuxVariant;

    fn tiny_cfg(mechanism: Mechanism) -> ModelConfig {
        let mut cfg = RunConfig::default().model;
        cfg.mechanism = mechanism;
        cfg.embed_dim = 5;
        cfg.hidden_dim = 4;
        cfg.attn_hidden = 3;
        cfg.aux_hidden = 3;
        cfg.window = 3;
        cfg
    }

    fn tiny_batch() -> SequenceBatch {
        let examples = vec![
            EncodedExample {
                ids: vec![2, 3, 4, 5],
                label: 0,
            },
            EncodedExample {
                ids: vec![5, 4],
                label: 1,
            },
        ];
        make_batches(&examples, 2, 10, None).unwrap().remove(0)
    }

    fn small_vocab() -> Vocab {
        let ex: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        Vocab::build(std::iter::once(ex.as_slice()), 1)
    }

    fn build(mechanism: Mechanism, seed: u64) -> GaNet {
        let cfg = tiny_cfg(mechanism);
        let rng = SeededRng::new(seed);
        let table = random_table(&small_vocab(), cfg.embed_dim, &rng.derive("emb"));
        GaNet::new(&cfg, &table, 2, &rng).unwrap()
    }

    #[test]
    fn probabilities_form_distributions() {
        for mech in [Mechanism::Soft, Mechanism::Gated, Mechanism::Local] {
            let model = build(mech, 7);
            let batch = tiny_batch();
            let out = model
                .forward_eval(&batch, GateMode::Threshold, None)
                .unwrap();
            for bi in 0..2 {
                let s: f64 = out.probs[bi * 2..bi * 2 + 2].iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "{mech:?}");
            }
            assert_eq!(out.predicted.len(), 2);
            assert_eq!(out.valid_positions, 6);
        }
    }

    #[test]
    fn train_and_eval_agree_for_soft_model() {
        // the soft model has no sampling, so the training math at an
        // inference tape must equal the eval path
        let model = build(Mechanism::Soft, 8);
        let batch = tiny_batch();
        let tape = Tape::inference();
        let train = model
            .forward_train(&tape, &batch, 1.0, GateDraw::Frozen(&[], &[]))
            .unwrap();
        let eval = model
            .forward_eval(&batch, GateMode::Threshold, None)
            .unwrap();
        for (a, b) in train.probs.to_vec().iter().zip(&eval.probs) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn pinned_gates_match_soft_model_bitwise() {
        let soft = build(Mechanism::Soft, 9);
        let mut cfg = tiny_cfg(Mechanism::Gated);
        cfg.pin_gates = true;
        let rng = SeededRng::new(9);
        let table = random_table(&small_vocab(), cfg.embed_dim, &rng.derive("emb"));
        let gated = GaNet::new(&cfg, &table, 2, &rng).unwrap();
        let batch = tiny_batch();
        let tape = Tape::inference();
        let a = soft
            .forward_train(&tape, &batch, 1.0, GateDraw::Frozen(&[], &[]))
            .unwrap();
        let b = gated
            .forward_train(&tape, &batch, 1.0, GateDraw::Frozen(&[], &[]))
            .unwrap();
        for (x, y) in a.probs.to_vec().iter().zip(b.probs.to_vec()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn gated_eval_reports_density_inputs() {
        let model = build(Mechanism::Gated, 10);
        let batch = tiny_batch();
        let out = model
            .forward_eval(&batch, GateMode::Threshold, None)
            .unwrap();
        assert_eq!(out.p.len(), batch.b * batch.t_max);
        assert!(out.open_gates <= out.valid_positions);
        assert_eq!(out.scored_positions, out.open_gates);
        // pads never open
        assert!(!out.gates[batch.t_max + 2]);
        assert!(!out.gates[batch.t_max + 3]);
    }

    #[test]
    fn sample_mode_requires_rng_and_is_seeded() {
        let model = build(Mechanism::Gated, 11);
        let batch = tiny_batch();
        assert!(model
            .forward_eval(&batch, GateMode::Sample, None)
            .is_err());
        let mut r1 = SeededRng::new(3);
        let mut r2 = SeededRng::new(3);
        let a = model
            .forward_eval(&batch, GateMode::Sample, Some(&mut r1))
            .unwrap();
        let b = model
            .forward_eval(&batch, GateMode::Sample, Some(&mut r2))
            .unwrap();
        assert_eq!(a.gates, b.gates);
        assert_eq!(a.predicted, b.predicted);
    }

    #[test]
    fn every_mechanism_passes_end_to_end_gradcheck() {
        for mech in [Mechanism::Soft, Mechanism::Gated, Mechanism::Local] {
            let model = build(mech, 12);
            let batch = tiny_batch();
            let n_eps = batch.b * batch.t_max;
            let noise_rng = &mut SeededRng::new(40);
            let eps0: Vec<f64> = (0..n_eps).map(|_| noise_rng.gumbel()).collect();
            let eps1: Vec<f64> = (0..n_eps).map(|_| noise_rng.gumbel()).collect();
            let params = model.params();
            let leaves: Vec<(&str, &Tensor)> = params
                .iter()
                .map(|(n, t)| (n.as_str(), t))
                .collect();
            let k = model.classes();
            let mut hot = vec![0.0; batch.b * k];
            for (bi, &l) in batch.labels.iter().enumerate() {
                hot[bi * k + l] = 1.0;
            }
            let onehot = Tensor::new(hot, &[batch.b, k]);
            let loss_fn = |tape: &Tape| {
                let fwd = model
                    .forward_train(tape, &batch, 1.0, GateDraw::Frozen(&eps0, &eps1))
                    .unwrap();
                let picked = tape.row_sum(&tape.mul(&fwd.probs, &onehot));
                let mut nll =
                    tape.neg(&tape.mean_all(&tape.log(&tape.clamp(&picked, 1e-12, 1.0))));
                if let Some(g) = &fwd.gate_soft {
                    let l1 = tape.mean_all(&tape.mul(g, &batch.mask2()));
                    nll = tape.add(&nll, &tape.mul_scalar(&l1, 0.01));
                }
                nll
            };
            let report = gradcheck(loss_fn, &leaves, 1e-5, 1e-4);
            assert!(report.passed(), "{mech:?}: {report}");
        }
    }

    #[test]
    fn aux_variants_all_run() {
        for variant in [AuxVariant::Lstm, AuxVariant::Ffn, AuxVariant::SelfAttention] {
            let mut cfg = tiny_cfg(Mechanism::Gated);
            cfg.aux_variant = variant;
            let rng = SeededRng::new(13);
            let table = random_table(&small_vocab(), cfg.embed_dim, &rng.derive("emb"));
            let model = GaNet::new(&cfg, &table, 2, &rng).unwrap();
            let batch = tiny_batch();
            let out = model
                .forward_eval(&batch, GateMode::Threshold, None)
                .unwrap();
            assert_eq!(out.probs.len(), 4);
        }
    }
}
