//! Batching with head truncation and suffix padding. Masks are carried as
//! 0/1 floats so they can be multiplied straight into tape computations.

use crate::autodiff::Tensor;
use crate::data::dataset::EncodedExample;
use crate::data::vocab::PAD_ID;
use crate::error::{GaError, Result};
use crate::stochastic::SeededRng;

#[derive(Clone, Debug)]
pub struct SequenceBatch {
    /// Row-major b × t_max token ids; padded slots hold PAD.
    pub ids: Vec<usize>,
    pub b: usize,
    pub t_max: usize,
    pub lengths: Vec<usize>,
    pub labels: Vec<usize>,
    /// Position of each row in the source example list (pre-shuffle index).
    pub example_indices: Vec<usize>,
    /// 1.0 at valid slots, 0.0 at padding, aligned with `ids`.
    pub mask: Vec<f64>,
}

impl SequenceBatch {
    pub fn valid(&self, bi: usize, t: usize) -> bool {
        t < self.lengths[bi]
    }

    pub fn valid_total(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// Mask as one scalar per b×t row, for row-wise multiplies.
    pub fn mask_rows(&self) -> Tensor {
        Tensor::new(self.mask.clone(), &[self.b * self.t_max])
    }

    pub fn mask2(&self) -> Tensor {
        Tensor::new(self.mask.clone(), &[self.b, self.t_max])
    }

    /// Column t of the mask, one scalar per example.
    pub fn step_mask(&self, t: usize) -> Tensor {
        let col: Vec<f64> = (0..self.b).map(|bi| self.mask[bi * self.t_max + t]).collect();
        Tensor::new(col, &[self.b])
    }

    pub fn row_ids(&self, bi: usize) -> &[usize] {
        &self.ids[bi * self.t_max..bi * self.t_max + self.lengths[bi]]
    }
}

pub fn make_batches(
    examples: &[EncodedExample],
    batch_size: usize,
    max_len: usize,
    shuffle: Option<&mut SeededRng>,
) -> Result<Vec<SequenceBatch>> {
    assert!(batch_size >= 1, "batch_size must be positive");
    assert!(max_len >= 1, "max_len must be positive");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if let Some(rng) = shuffle {
        rng.shuffle(&mut order);
    }
    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        let b = chunk.len();
        let mut lengths = Vec::with_capacity(b);
        for &i in chunk {
            let len = examples[i].ids.len().min(max_len);
            if len == 0 {
                return Err(GaError::contract(format!(
                    "example {i} has no tokens; empty sequences cannot be encoded"
                )));
            }
            lengths.push(len);
        }
        let t_max = *lengths.iter().max().unwrap();
        let mut ids = vec![PAD_ID; b * t_max];
        let mut mask = vec![0.0; b * t_max];
        for (bi, &i) in chunk.iter().enumerate() {
            let len = lengths[bi];
            ids[bi * t_max..bi * t_max + len].copy_from_slice(&examples[i].ids[..len]);
            for slot in mask.iter_mut().skip(bi * t_max).take(len) {
                *slot = 1.0;
            }
        }
        batches.push(SequenceBatch {
            ids,
            b,
            t_max,
            lengths,
            labels: chunk.iter().map(|&i| examples[i].label).collect(),
            example_indices: chunk.to_vec(),
            mask,
        });
    }
    Ok(batches)
}
