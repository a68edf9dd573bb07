//! The three aggregation mechanisms over encoder states: global soft
//! attention, gated attention with masked renormalization, and local
//! windowed attention.
//!
//! Training paths are tape compositions; evaluation under hard gates runs a
//! packed path that gathers open positions and never evaluates the score MLP
//! at closed ones. Both share the same kernels and iteration order, so
//! all-open hard gating reproduces soft attention bit for bit.

use crate::autodiff::{Tape, Tensor};
use crate::data::SequenceBatch;
use crate::error::{GaError, Result};
use crate::layers::{PositionPredictor, ScoreMlp};

pub struct AttentionOutput {
    /// Aggregated context per example, B×D.
    pub context: Tensor,
    /// Attention weights, B×T; exact zeros outside the active set.
    pub alpha: Tensor,
    /// Per-example active-set size |S|.
    pub active: Vec<usize>,
    /// Positions whose score MLP actually ran (packed paths only; tape paths
    /// score every valid position).
    pub scored_positions: usize,
    /// Examples rescued by the all-gates-closed fallback.
    pub fallbacks: usize,
}

/// Softmax over open positions with optional soft-gate weighting:
/// α = g ⊙ exp(e − m) ⊙ open / Σ. The per-row max m over open positions is a
/// detached constant; the softmax value is invariant to the shift, so the
/// gradient is unaffected.
pub fn masked_softmax_tape(
    tape: &Tape,
    scores: &Tensor,
    open01: &Tensor,
    gates: Option<&Tensor>,
) -> Tensor {
    let shape = scores.shape();
    let cols = shape[shape.len() - 1];
    let rows = scores.len() / cols;
    let maxes: Vec<f64> = {
        let s = scores.data();
        let o = open01.data();
        (0..rows)
            .map(|r| {
                let mut m = f64::NEG_INFINITY;
                for i in r * cols..(r + 1) * cols {
                    if o[i] > 0.0 && s[i] > m {
                        m = s[i];
                    }
                }
                m
            })
            .collect()
    };
    let mut z = tape.mul(
        &tape.exp(&tape.row_sub(scores, &Tensor::new(maxes, &[rows]))),
        open01,
    );
    if let Some(g) = gates {
        z = tape.mul(&z, g);
    }
    tape.row_div(&z, &tape.row_sum(&z))
}

fn require_valid(batch: &SequenceBatch) -> Result<()> {
    if batch.lengths.contains(&0) {
        return Err(GaError::contract(
            "attention requires at least one valid position per example",
        ));
    }
    Ok(())
}

/// Global soft attention: softmax over all valid positions.
pub fn soft_attention(
    tape: &Tape,
    scorer: &ScoreMlp,
    states: &Tensor,
    batch: &SequenceBatch,
) -> Result<AttentionOutput> {
    require_valid(batch)?;
    let scores = scorer.score_states(tape, states);
    let alpha = masked_softmax_tape(tape, &scores, &batch.mask2(), None);
    let context = tape.attend(states, &alpha);
    Ok(AttentionOutput {
        context,
        alpha,
        active: batch.lengths.clone(),
        scored_positions: batch.valid_total(),
        fallbacks: 0,
    })
}

/// Training-time gated attention: soft gates weight the exponentiated scores
/// before renormalization; everything stays differentiable.
pub fn gated_attention_soft(
    tape: &Tape,
    scorer: &ScoreMlp,
    states: &Tensor,
    gate_soft: &Tensor,
    batch: &SequenceBatch,
) -> Result<AttentionOutput> {
    require_valid(batch)?;
    let scores = scorer.score_states(tape, states);
    let alpha = masked_softmax_tape(tape, &scores, &batch.mask2(), Some(gate_soft));
    let context = tape.attend(states, &alpha);
    Ok(AttentionOutput {
        context,
        alpha,
        active: batch.lengths.clone(),
        scored_positions: batch.valid_total(),
        fallbacks: 0,
    })
}

/// Test-time gated attention. Only rows in the open set reach the score MLP;
/// closed positions get exactly zero weight. Examples whose gates are all
/// closed fall back to the single position with the largest p, counted in
/// `fallbacks`. Returns the effective open set alongside the output.
pub fn gated_attention_hard(
    tape: &Tape,
    scorer: &ScoreMlp,
    states: &Tensor,
    open: &[bool],
    p: &[f64],
    batch: &SequenceBatch,
) -> Result<(AttentionOutput, Vec<bool>)> {
    require_valid(batch)?;
    let (b, t_max) = (batch.b, batch.t_max);
    assert_eq!(open.len(), b * t_max, "gate vector must cover the batch");
    assert_eq!(p.len(), b * t_max, "probability vector must cover the batch");
    let mut effective = vec![false; b * t_max];
    let mut open_rows: Vec<Vec<usize>> = Vec::with_capacity(b);
    let mut fallbacks = 0;
    for bi in 0..b {
        let len = batch.lengths[bi];
        let base = bi * t_max;
        let mut rows: Vec<usize> =
            (0..len).filter(|&t| open[base + t]).map(|t| base + t).collect();
        if rows.is_empty() {
            // strict > keeps the earliest position on ties
            let mut best = 0;
            for t in 1..len {
                if p[base + t] > p[base + best] {
                    best = t;
                }
            }
            rows.push(base + best);
            fallbacks += 1;
        }
        for &r in &rows {
            effective[r] = true;
        }
        open_rows.push(rows);
    }
    let out = packed_attention(tape, scorer, states, &open_rows, None, batch, fallbacks)?;
    Ok((out, effective))
}

/// Window geometry for local attention: positions within `size/2` of the
/// predicted center participate; unless `sigma_infinite`, their weights are
/// damped by a Gaussian with sigma = size/4.
#[derive(Clone, Copy, Debug)]
pub struct LocalWindow {
    pub size: usize,
    pub sigma_infinite: bool,
}

/// Local attention around a predicted center position.
///
/// The window membership is a hard decision from the detached center; scores
/// inside the window softmax normally and, unless the window disables it,
/// each weight is damped by exp(-(t-p)^2/(2 sigma^2)) and renormalized.
/// With the tape recording (training) every valid position is scored; in
/// inference the packed path scores window positions only.
pub fn local_attention(
    tape: &Tape,
    scorer: &ScoreMlp,
    predictor: &PositionPredictor,
    states: &Tensor,
    h_last: &Tensor,
    batch: &SequenceBatch,
    win: LocalWindow,
) -> Result<AttentionOutput> {
    require_valid(batch)?;
    assert!(win.size >= 1, "window must be at least 1");
    let (b, t_max) = (batch.b, batch.t_max);
    let centers = predictor.centers(tape, h_last, &batch.lengths);
    let cvals = centers.to_vec();
    let half = win.size as f64 / 2.0;
    let sigma = win.size as f64 / 4.0;

    let mut window_rows: Vec<Vec<usize>> = Vec::with_capacity(b);
    for (bi, &c) in cvals.iter().enumerate() {
        let len = batch.lengths[bi];
        let base = bi * t_max;
        let mut rows: Vec<usize> = (0..len)
            .filter(|&t| {
                let tf = t as f64;
                tf >= c - half && tf <= c + half
            })
            .map(|t| base + t)
            .collect();
        if rows.is_empty() {
            rows.push(base + (c.round().max(0.0) as usize).min(len - 1));
        }
        window_rows.push(rows);
    }

    if tape.is_recording() {
        let mut open = vec![0.0; b * t_max];
        for rows in &window_rows {
            for &r in rows {
                open[r] = 1.0;
            }
        }
        let scores = scorer.score_states(tape, states);
        let open01 = Tensor::new(open, &[b, t_max]);
        let mut alpha = masked_softmax_tape(tape, &scores, &open01, None);
        if !win.sigma_infinite {
            let tpos = Tensor::new(
                (0..b * t_max).map(|i| (i % t_max) as f64).collect(),
                &[b, t_max],
            );
            let diff = tape.row_sub(&tpos, &centers);
            let factor = tape.exp(&tape.mul_scalar(
                &tape.mul(&diff, &diff),
                -1.0 / (2.0 * sigma * sigma),
            ));
            // closed positions stay exactly zero: alpha is zero there already
            let weighted = tape.mul(&alpha, &factor);
            alpha = tape.row_div(&weighted, &tape.row_sum(&weighted));
        }
        let context = tape.attend(states, &alpha);
        return Ok(AttentionOutput {
            context,
            alpha,
            active: window_rows.iter().map(Vec::len).collect(),
            scored_positions: batch.valid_total(),
            fallbacks: 0,
        });
    }

    let gaussian = if win.sigma_infinite {
        None
    } else {
        Some((cvals.as_slice(), sigma))
    };
    packed_attention(tape, scorer, states, &window_rows, gaussian, batch, 0)
}

/// Shared evaluation path: gather the active rows, score only them, softmax
/// each example's packed slice, optionally damp by the Gaussian factor, and
/// scatter back.
fn packed_attention(
    tape: &Tape,
    scorer: &ScoreMlp,
    states: &Tensor,
    active_rows: &[Vec<usize>],
    gaussian: Option<(&[f64], f64)>,
    batch: &SequenceBatch,
    fallbacks: usize,
) -> Result<AttentionOutput> {
    let (b, t_max) = (batch.b, batch.t_max);
    let d = states.shape()[2];
    let flat = tape.reshape(states, &[b * t_max, d]);
    let all_rows: Vec<usize> = active_rows.iter().flatten().copied().collect();
    let gathered = tape.gather(&flat, &all_rows);
    let scores = scorer.score_rows(tape, &gathered).to_vec();

    let mut alpha = vec![0.0; b * t_max];
    let mut offset = 0;
    for (bi, rows) in active_rows.iter().enumerate() {
        let slice = &scores[offset..offset + rows.len()];
        let m = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z: Vec<f64> = slice.iter().map(|&s| (s - m).exp()).collect();
        let denom: f64 = z.iter().sum();
        for v in &mut z {
            *v /= denom;
        }
        if let Some((centers, sigma)) = gaussian {
            let c = centers[bi];
            for (v, &r) in z.iter_mut().zip(rows) {
                let t = (r % t_max) as f64;
                *v *= (-(t - c) * (t - c) / (2.0 * sigma * sigma)).exp();
            }
            let total: f64 = z.iter().sum();
            for v in &mut z {
                *v /= total;
            }
        }
        for (&r, &v) in rows.iter().zip(&z) {
            alpha[r] = v;
        }
        offset += rows.len();
    }
    let alpha = Tensor::new(alpha, &[b, t_max]);
    let context = tape.attend(states, &alpha);
    Ok(AttentionOutput {
        context,
        alpha,
        active: active_rows.iter().map(Vec::len).collect(),
        scored_positions: all_rows.len(),
        fallbacks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_batches, EncodedExample};
    use crate::stochastic::SeededRng;

    fn batch_of(lens: &[usize]) -> SequenceBatch {
        let examples: Vec<EncodedExample> = lens
            .iter()
            .map(|&l| EncodedExample {
                ids: (2..2 + l).collect(),
                label: 0,
            })
            .collect();
        make_batches(&examples, lens.len(), 100, None).unwrap().remove(0)
    }

    fn random_states(b: usize, t: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = SeededRng::new(seed);
        Tensor::new(
            (0..b * t * d).map(|_| rng.range_f64(-1.5, 1.5)).collect(),
            &[b, t, d],
        )
    }

    #[test]
    fn hand_softmax_values() {
        let tape = Tape::inference();
        let scores = Tensor::new(vec![1.0, 2.0, 3.0], &[1, 3]);
        let open = Tensor::new(vec![1.0, 1.0, 1.0], &[1, 3]);
        let a = masked_softmax_tape(&tape, &scores, &open, None).to_vec();
        assert!((a[0] - 0.0900).abs() < 5e-5);
        assert!((a[1] - 0.2447).abs() < 5e-5);
        assert!((a[2] - 0.6652).abs() < 5e-5);
    }

    #[test]
    fn hand_gated_renormalization() {
        // e = [1, 2, 3], hard gates [1, 0, 1] → α ≈ [0.1192, 0, 0.8808]
        let tape = Tape::inference();
        let scores = Tensor::new(vec![1.0, 2.0, 3.0], &[1, 3]);
        let open = Tensor::new(vec![1.0, 0.0, 1.0], &[1, 3]);
        let a = masked_softmax_tape(&tape, &scores, &open, None).to_vec();
        assert!((a[0] - 0.1192).abs() < 5e-5);
        assert_eq!(a[1], 0.0);
        assert!((a[2] - 0.8808).abs() < 5e-5);
    }

    #[test]
    fn uniform_when_scores_equal() {
        let tape = Tape::inference();
        let scores = Tensor::new(vec![0.7; 4], &[1, 4]);
        let open = Tensor::new(vec![1.0; 4], &[1, 4]);
        let a = masked_softmax_tape(&tape, &scores, &open, None).to_vec();
        for v in a {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_soft_gates_cancel() {
        let tape = Tape::inference();
        let scores = Tensor::new(vec![0.3; 3], &[1, 3]);
        let open = Tensor::new(vec![1.0; 3], &[1, 3]);
        let gates = Tensor::new(vec![0.5; 3], &[1, 3]);
        let a = masked_softmax_tape(&tape, &scores, &open, Some(&gates)).to_vec();
        for v in a {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_stability() {
        let tape = Tape::inference();
        let base = [0.4, -1.1, 2.3, 0.0];
        let open = Tensor::new(vec![1.0, 0.0, 1.0, 1.0], &[1, 4]);
        let a = masked_softmax_tape(&tape, &Tensor::new(base.to_vec(), &[1, 4]), &open, None)
            .to_vec();
        let shifted: Vec<f64> = base.iter().map(|&s| s + 3.0).collect();
        let b = masked_softmax_tape(&tape, &Tensor::new(shifted, &[1, 4]), &open, None).to_vec();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn all_open_hard_equals_soft_bitwise() {
        let mut rng = SeededRng::new(10);
        let scorer = ScoreMlp::new(4, 3, &mut rng);
        let batch = batch_of(&[5, 3, 7]);
        let states = random_states(3, 7, 4, 20);
        let tape = Tape::inference();
        let soft = soft_attention(&tape, &scorer, &states, &batch).unwrap();
        let open: Vec<bool> = batch.mask.iter().map(|&m| m > 0.0).collect();
        let p = vec![1.0; batch.b * batch.t_max];
        let (hard, effective) =
            gated_attention_hard(&tape, &scorer, &states, &open, &p, &batch).unwrap();
        let (sa, ha) = (soft.alpha.to_vec(), hard.alpha.to_vec());
        for (x, y) in sa.iter().zip(&ha) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let (sc, hc) = (soft.context.to_vec(), hard.context.to_vec());
        for (x, y) in sc.iter().zip(&hc) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(hard.fallbacks, 0);
        assert_eq!(hard.scored_positions, 15);
        assert_eq!(effective, open);
    }

    #[test]
    fn closed_positions_are_skipped_and_zero() {
        let mut rng = SeededRng::new(11);
        let scorer = ScoreMlp::new(4, 3, &mut rng);
        let batch = batch_of(&[6]);
        let states = random_states(1, 6, 4, 21);
        let tape = Tape::inference();
        let open = vec![false, true, false, true, true, false];
        let p = vec![0.1; 6];
        let (out, effective) =
            gated_attention_hard(&tape, &scorer, &states, &open, &p, &batch).unwrap();
        assert_eq!(out.scored_positions, 3);
        assert_eq!(out.active, vec![3]);
        let a = out.alpha.to_vec();
        for (t, (&o, &av)) in open.iter().zip(&a).enumerate() {
            assert_eq!(o, av != 0.0, "position {t}");
        }
        let total: f64 = a.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(effective, open);
    }

    #[test]
    fn packed_matches_bruteforce_over_patterns() {
        let mut rng = SeededRng::new(12);
        let scorer = ScoreMlp::new(3, 2, &mut rng);
        let t = 4;
        let batch = batch_of(&[t]);
        let states = random_states(1, t, 3, 22);
        let tape = Tape::inference();
        let full_scores = scorer.score_states(&tape, &states).to_vec();
        for pattern in 1u32..(1 << t) {
            let open: Vec<bool> = (0..t).map(|i| pattern & (1 << i) != 0).collect();
            let p = vec![0.5; t];
            let (out, _) =
                gated_attention_hard(&tape, &scorer, &states, &open, &p, &batch).unwrap();
            let a = out.alpha.to_vec();
            let m = full_scores
                .iter()
                .zip(&open)
                .filter(|(_, &o)| o)
                .map(|(&s, _)| s)
                .fold(f64::NEG_INFINITY, f64::max);
            let z: Vec<f64> = full_scores
                .iter()
                .zip(&open)
                .map(|(&s, &o)| if o { (s - m).exp() } else { 0.0 })
                .collect();
            let denom: f64 = z.iter().sum();
            for (got, want) in a.iter().zip(z.iter().map(|&v| v / denom)) {
                assert!((got - want).abs() < 1e-12, "pattern {pattern:b}");
            }
        }
    }

    #[test]
    fn all_closed_falls_back_to_best_p() {
        let mut rng = SeededRng::new(13);
        let scorer = ScoreMlp::new(3, 2, &mut rng);
        let batch = batch_of(&[4]);
        let states = random_states(1, 4, 3, 23);
        let tape = Tape::inference();
        let open = vec![false; 4];
        let p = vec![0.2, 0.4, 0.4, 0.1];
        let (out, effective) =
            gated_attention_hard(&tape, &scorer, &states, &open, &p, &batch).unwrap();
        assert_eq!(out.fallbacks, 1);
        assert_eq!(out.scored_positions, 1);
        // ties resolve to the lowest index
        assert_eq!(effective, vec![false, true, false, false]);
        let a = out.alpha.to_vec();
        assert_eq!(a[1], 1.0);
        assert_eq!(a[0] + a[2] + a[3], 0.0);
    }

    #[test]
    fn single_valid_position_gets_full_weight() {
        let mut rng = SeededRng::new(14);
        let scorer = ScoreMlp::new(3, 2, &mut rng);
        let batch = batch_of(&[1, 4]);
        let states = random_states(2, 4, 3, 24);
        let tape = Tape::inference();
        let out = soft_attention(&tape, &scorer, &states, &batch).unwrap();
        let a = out.alpha.to_vec();
        assert_eq!(a[0], 1.0);
        assert_eq!(&a[1..4], &[0.0, 0.0, 0.0]);
        let ctx = out.context.to_vec();
        let st = states.to_vec();
        for d in 0..3 {
            assert_eq!(ctx[d], st[d]);
        }
    }

    #[test]
    fn local_window_restricts_support() {
        let mut rng = SeededRng::new(15);
        let scorer = ScoreMlp::new(4, 3, &mut rng);
        let predictor = PositionPredictor::new(4, 3, &mut rng);
        let batch = batch_of(&[9]);
        let states = random_states(1, 9, 4, 25);
        let h_last = Tensor::new(vec![0.3, -0.2, 0.6, 0.1], &[1, 4]);
        let tape = Tape::inference();
        let out = local_attention(
            &tape, &scorer, &predictor, &states, &h_last, &batch,
            LocalWindow { size: 3, sigma_infinite: false },
        )
        .unwrap();
        let a = out.alpha.to_vec();
        let nonzero = a.iter().filter(|&&v| v != 0.0).count();
        assert!(nonzero <= 4, "window 3 should cover at most 4 positions");
        assert_eq!(nonzero, out.active[0]);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(out.scored_positions, out.active[0]);
    }

    #[test]
    fn huge_window_with_infinite_sigma_equals_soft() {
        let mut rng = SeededRng::new(16);
        let scorer = ScoreMlp::new(4, 3, &mut rng);
        let predictor = PositionPredictor::new(4, 3, &mut rng);
        let batch = batch_of(&[5, 2]);
        let states = random_states(2, 5, 4, 26);
        let tape = Tape::inference();
        let enc_last = Tensor::new(vec![0.1; 8], &[2, 4]);
        let soft = soft_attention(&tape, &scorer, &states, &batch).unwrap();
        let local = local_attention(
            &tape, &scorer, &predictor, &states, &enc_last, &batch,
            LocalWindow { size: 100, sigma_infinite: true },
        )
        .unwrap();
        for (x, y) in soft.alpha.to_vec().iter().zip(local.alpha.to_vec()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn window_one_concentrates_on_rounded_center() {
        let mut rng = SeededRng::new(17);
        let scorer = ScoreMlp::new(4, 3, &mut rng);
        let predictor = PositionPredictor::new(4, 3, &mut rng);
        let batch = batch_of(&[8]);
        let states = random_states(1, 8, 4, 27);
        let h_last = Tensor::new(vec![0.5, -0.5, 0.2, 0.9], &[1, 4]);
        let tape = Tape::inference();
        let out = local_attention(
            &tape, &scorer, &predictor, &states, &h_last, &batch,
            LocalWindow { size: 1, sigma_infinite: false },
        )
        .unwrap();
        let centers = predictor.centers(&tape, &h_last, &batch.lengths).to_vec();
        let a = out.alpha.to_vec();
        let support: Vec<usize> = (0..8).filter(|&t| a[t] != 0.0).collect();
        assert!(support.len() <= 2);
        assert!(support.contains(&(centers[0].round() as usize).min(7)));
    }

    #[test]
    fn training_and_eval_local_paths_agree() {
        let mut rng = SeededRng::new(18);
        let scorer = ScoreMlp::new(4, 3, &mut rng);
        let predictor = PositionPredictor::new(4, 3, &mut rng);
        let batch = batch_of(&[6, 4]);
        let states = random_states(2, 6, 4, 28);
        let h_last = Tensor::new(
            vec![0.2, -0.4, 0.8, 0.0, -0.3, 0.5, 0.1, 0.7],
            &[2, 4],
        );
        let train_out = local_attention(
            &Tape::new(), &scorer, &predictor, &states, &h_last, &batch,
            LocalWindow { size: 4, sigma_infinite: false },
        )
        .unwrap();
        let eval_out = local_attention(
            &Tape::inference(), &scorer, &predictor, &states, &h_last, &batch,
            LocalWindow { size: 4, sigma_infinite: false },
        )
        .unwrap();
        for (x, y) in train_out.alpha.to_vec().iter().zip(eval_out.alpha.to_vec()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
