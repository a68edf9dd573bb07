//! Synthetic keyword-classification task: noise tokens with exactly one
//! class-determining keyword per example. Gold keyword positions are kept so
//! gate precision and recall can be scored against a known sparse signal.

use crate::data::dataset::RawExample;
use crate::error::Result;
use crate::stochastic::SeededRng;

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub examples: Vec<RawExample>,
    /// Index of the keyword within each example's token list.
    pub gold_positions: Vec<usize>,
    /// Keyword token per class id.
    pub keywords: Vec<String>,
}

pub fn synth_keyword_task(
    n_examples: usize,
    vocab_size: usize,
    seq_len: usize,
    n_keywords: usize,
    seed: u64,
) -> Result<SynthDataset> {
    use crate::error::GaError;
    if seq_len < 3 {
        return Err(GaError::contract(format!("seq_len {seq_len} < 3")));
    }
    if n_keywords == 0 || n_keywords >= vocab_size {
        return Err(GaError::contract(format!(
            "need 0 < n_keywords < vocab_size, got {n_keywords} of {vocab_size}"
        )));
    }
    let mut rng = SeededRng::new(seed).derive("synth");
    let words: Vec<String> = (0..vocab_size).map(|i| format!("w{i:03}")).collect();
    let mut keyword_ids: Vec<usize> = Vec::with_capacity(n_keywords);
    while keyword_ids.len() < n_keywords {
        let cand = rng.below(vocab_size);
        if !keyword_ids.contains(&cand) {
            keyword_ids.push(cand);
        }
    }
    let noise_pool: Vec<usize> = (0..vocab_size).filter(|i| !keyword_ids.contains(i)).collect();

    let mut examples = Vec::with_capacity(n_examples);
    let mut gold_positions = Vec::with_capacity(n_examples);
    for _ in 0..n_examples {
        let class = rng.below(n_keywords);
        let pos = rng.below(seq_len);
        let mut tokens: Vec<String> = (0..seq_len)
            .map(|_| words[noise_pool[rng.below(noise_pool.len())]].clone())
            .collect();
        tokens[pos] = words[keyword_ids[class]].clone();
        examples.push(RawExample {
            label: format!("c{class}"),
            tokens,
        });
        gold_positions.push(pos);
    }
    Ok(SynthDataset {
        examples,
        gold_positions,
        keywords: keyword_ids.iter().map(|&i| words[i].clone()).collect(),
    })
}
