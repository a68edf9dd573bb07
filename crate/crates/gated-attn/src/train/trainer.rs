//! Epoch loop: shuffled minibatches, joint loss, clipped Adam steps,
//! per-epoch validation, and best-checkpoint tracking with a density
//! tie-break. A non-finite loss or gradient aborts training and restores the
//! last model that validated well.

use std::io::Write;
use std::time::Instant;

use crate::autodiff::{Tape, Tensor};
use crate::config::RunConfig;
use crate::data::{make_batches, EncodedExample};
use crate::error::{GaError, Result};
use crate::model::GaNet;
use crate::stochastic::{GateDraw, GateMode, SeededRng};
use crate::train::adam::{clip_global_norm, AdamState};
use crate::train::loss::joint_loss;

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_density: f64,
    pub wall_ms: u128,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub best_val_density: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, Default)]
pub struct EvalStats {
    pub examples: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub open_gates: usize,
    pub valid_positions: usize,
    pub scored_positions: usize,
    pub fallbacks: usize,
    /// open gates / valid positions
    pub density: f64,
}

/// Runs the model over a dataset with hard gates and accumulates counters.
pub fn evaluate(
    model: &GaNet,
    examples: &[EncodedExample],
    batch_size: usize,
    max_len: usize,
    mode: GateMode,
    mut rng: Option<&mut SeededRng>,
) -> Result<EvalStats> {
    let mut stats = EvalStats::default();
    for batch in make_batches(examples, batch_size, max_len, None)? {
        let out = model.forward_eval(&batch, mode, rng.as_deref_mut())?;
        stats.examples += batch.b;
        stats.correct += out
            .predicted
            .iter()
            .zip(&batch.labels)
            .filter(|(p, g)| p == g)
            .count();
        stats.open_gates += out.open_gates;
        stats.valid_positions += out.valid_positions;
        stats.scored_positions += out.scored_positions;
        stats.fallbacks += out.fallbacks;
    }
    if stats.examples == 0 {
        return Err(GaError::contract("evaluation needs at least one example"));
    }
    stats.accuracy = stats.correct as f64 / stats.examples as f64;
    stats.density = stats.open_gates as f64 / stats.valid_positions as f64;
    Ok(stats)
}

fn snapshot(params: &[(String, Tensor)]) -> Vec<Vec<f64>> {
    params.iter().map(|(_, p)| p.to_vec()).collect()
}

fn restore(params: &[(String, Tensor)], saved: &[Vec<f64>]) {
    for ((_, p), s) in params.iter().zip(saved) {
        p.data_mut().copy_from_slice(s);
    }
}

/// Trains in place. On return the model carries the weights of the best
/// validation epoch (highest accuracy; ties broken by lower gate density).
/// One `epoch=... train_loss=... val_acc=... val_density=... wall_ms=...`
/// line per epoch goes to `report`.
pub fn train_model(
    model: &GaNet,
    cfg: &RunConfig,
    train_ex: &[EncodedExample],
    val_ex: &[EncodedExample],
    rng: &SeededRng,
    report: &mut dyn Write,
) -> Result<TrainOutcome> {
    if train_ex.is_empty() || val_ex.is_empty() {
        return Err(GaError::contract(
            "training needs non-empty train and validation sets",
        ));
    }
    let params = model.params();
    let mut adam = AdamState::new(&params, cfg.train.lr);
    let mut shuffle_rng = rng.derive("train:shuffle");
    let mut gate_rng = rng.derive("train:gates");
    let mut best: Option<(usize, f64, f64, Vec<Vec<f64>>)> = None;
    let mut epochs = Vec::new();
    let mut diverged = false;

    'outer: for epoch in 1..=cfg.train.epochs {
        let started = Instant::now();
        let batches = make_batches(
            train_ex,
            cfg.train.batch_size,
            cfg.train.max_len,
            Some(&mut shuffle_rng),
        )?;
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in &batches {
            for (_, p) in &params {
                p.zero_grad();
            }
            let tape = Tape::new();
            let fwd = model.forward_train(
                &tape,
                batch,
                cfg.train.tau,
                GateDraw::Sample(&mut gate_rng),
            )?;
            let loss = joint_loss(
                &tape,
                &fwd.probs,
                fwd.gate_soft.as_ref(),
                batch,
                cfg.train.lambda,
            )?;
            let loss_val = loss.item();
            if !loss_val.is_finite() {
                diverged = true;
                break 'outer;
            }
            tape.backward(&loss);
            clip_global_norm(&params, cfg.train.clip);
            match adam.step(&params) {
                Ok(()) => {}
                Err(GaError::NanGradient(_)) => {
                    diverged = true;
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
            loss_sum += loss_val * batch.b as f64;
            seen += batch.b;
        }
        let train_loss = loss_sum / seen as f64;
        let mut val_rng = rng.derive(&format!("val:{epoch}"));
        let val = evaluate(
            model,
            val_ex,
            cfg.train.batch_size,
            cfg.train.max_len,
            cfg.train.gate_mode,
            Some(&mut val_rng),
        )?;
        let stats = EpochStats {
            epoch,
            train_loss,
            val_acc: val.accuracy,
            val_density: val.density,
            wall_ms: started.elapsed().as_millis(),
        };
        writeln!(
            report,
            "epoch={} train_loss={:.6} val_acc={:.4} val_density={:.4} wall_ms={}",
            stats.epoch, stats.train_loss, stats.val_acc, stats.val_density, stats.wall_ms
        )
        .map_err(|e| GaError::io("report", e))?;
        let better = match &best {
            None => true,
            Some((_, acc, den, _)) => {
                val.accuracy > *acc || (val.accuracy == *acc && val.density < *den)
            }
        };
        if better {
            best = Some((epoch, val.accuracy, val.density, snapshot(&params)));
        }
        epochs.push(stats);
    }

    match best {
        Some((best_epoch, best_val_acc, best_val_density, saved)) => {
            restore(&params, &saved);
            Ok(TrainOutcome {
                epochs,
                best_epoch,
                best_val_acc,
                best_val_density,
                diverged,
            })
        }
        None => Err(GaError::contract(
            "training diverged before completing a single epoch",
        )),
    }
}
