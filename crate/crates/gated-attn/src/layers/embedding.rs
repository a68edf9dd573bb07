//! Embedding lookup layer. The table may be frozen (default) or fine-tuned;
//! either way padded positions are multiplied to exact zero, so the PAD row
//! can never leak into the encoder or receive gradient.

use crate::autodiff::{Tape, Tensor};
use crate::data::{EmbeddingTable, SequenceBatch};
use crate::error::{GaError, Result};

pub struct Embedding {
    pub table: Tensor,
    pub dim: usize,
    pub trainable: bool,
}

impl Embedding {
    pub fn from_table(table: &EmbeddingTable, trainable: bool) -> Embedding {
        let shape = [table.vocab_size, table.dim];
        let tensor = if trainable {
            Tensor::requires_grad(table.data.clone(), &shape)
        } else {
            Tensor::new(table.data.clone(), &shape)
        };
        Embedding {
            table: tensor,
            dim: table.dim,
            trainable,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        if self.trainable {
            vec![(format!("{prefix}.table"), self.table.clone())]
        } else {
            Vec::new()
        }
    }

    /// Looks up the batch ids into a B×T×E tensor with zeroed padding rows.
    pub fn forward(&self, tape: &Tape, batch: &SequenceBatch) -> Result<Tensor> {
        let v = self.vocab_size();
        if let Some(&bad) = batch.ids.iter().find(|&&i| i >= v) {
            return Err(GaError::contract(format!(
                "token id {bad} outside vocabulary of {v}; map OOV to UNK upstream"
            )));
        }
        let rows = tape.gather(&self.table, &batch.ids);
        let masked = tape.row_mul(&rows, &batch.mask_rows());
        Ok(tape.reshape(&masked, &[batch.b, batch.t_max, self.dim]))
    }
}
