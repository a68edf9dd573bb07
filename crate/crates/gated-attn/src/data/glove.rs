//! GloVe text-format embedding ingestion. Vocabulary rows missing from the
//! file are filled with seeded N(0, 0.1²) draws derived per token, so the
//! table is reproducible regardless of vocab ordering; the PAD row is always
//! zero.

use std::io::BufRead;
use std::path::Path;

use crate::data::vocab::{Vocab, PAD_ID};
use crate::error::{GaError, Result};
use crate::stochastic::SeededRng;

const MISSING_ROW_STD: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub data: Vec<f64>,
    pub vocab_size: usize,
    pub dim: usize,
    /// Count of vocab tokens found in the file (0 for random tables).
    pub found: usize,
}

impl EmbeddingTable {
    pub fn coverage(&self) -> f64 {
        self.found as f64 / self.vocab_size as f64
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }
}

/// Fills every non-PAD row from the seeded per-token stream; used when no
/// embedding file is configured.
pub fn random_table(vocab: &Vocab, dim: usize, rng: &SeededRng) -> EmbeddingTable {
    let mut data = vec![0.0; vocab.len() * dim];
    for (id, tok) in vocab.tokens().iter().enumerate() {
        if id == PAD_ID {
            continue;
        }
        fill_missing_row(&mut data[id * dim..(id + 1) * dim], tok, rng);
    }
    EmbeddingTable {
        data,
        vocab_size: vocab.len(),
        dim,
        found: 0,
    }
}

fn fill_missing_row(row: &mut [f64], token: &str, rng: &SeededRng) {
    let mut r = rng.derive(&format!("emb:{token}"));
    for v in row.iter_mut() {
        *v = r.normal(0.0, MISSING_ROW_STD);
    }
}

pub fn load_embeddings(path: &Path, vocab: &Vocab, rng: &SeededRng) -> Result<EmbeddingTable> {
    let f = std::fs::File::open(path).map_err(|e| GaError::io(path, e))?;
    let reader = std::io::BufReader::new(f);
    let mut dim: Option<usize> = None;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    let mut found = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| GaError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let word = parts.next().unwrap_or("");
        let vals: Vec<&str> = parts.collect();
        let d = *dim.get_or_insert(vals.len());
        if vals.len() != d {
            return Err(GaError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("dimension {} after seeing {d}", vals.len()),
            });
        }
        if !vocab.contains(word) {
            continue;
        }
        let id = vocab.id(word);
        let mut row = Vec::with_capacity(d);
        for v in vals {
            row.push(v.parse::<f64>().map_err(|_| GaError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("unreadable float {v:?}"),
            })?);
        }
        if rows[id].is_none() {
            found += 1;
        }
        rows[id] = Some(row);
    }
    let dim = dim.ok_or_else(|| GaError::Parse {
        path: path.display().to_string(),
        line: 1,
        msg: "empty embedding file".into(),
    })?;
    let mut data = vec![0.0; vocab.len() * dim];
    for (id, tok) in vocab.tokens().iter().enumerate() {
        if id == PAD_ID {
            continue;
        }
        let dst = &mut data[id * dim..(id + 1) * dim];
        match &rows[id] {
            Some(row) => dst.copy_from_slice(row),
            None => fill_missing_row(dst, tok, rng),
        }
    }
    Ok(EmbeddingTable {
        data,
        vocab_size: vocab.len(),
        dim,
        found,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toy_vocab(words: &[&str]) -> Vocab {
        let ex: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        Vocab::build([ex.as_slice()], 1)
    }

    fn write_file(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        p
    }

    #[test]
    fn loads_exact_rows_and_coverage() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "toy.txt",
            "cat 0.1 -0.2 0.3\ndog 1.0 2.0 -3.0\nunused 9 9 9\n",
        );
        let vocab = toy_vocab(&["cat", "dog", "bird"]);
        let rng = SeededRng::new(5);
        let t = load_embeddings(&p, &vocab, &rng).unwrap();
        assert_eq!(t.dim, 3);
        assert_eq!(t.row(vocab.id("cat")), &[0.1, -0.2, 0.3]);
        assert_eq!(t.row(vocab.id("dog")), &[1.0, 2.0, -3.0]);
        assert_eq!(t.found, 2);
        // brute force: vocab ∩ file
        let in_file = ["cat", "dog", "unused"];
        let brute = vocab.tokens().iter().filter(|t| in_file.contains(&t.as_str())).count();
        assert_eq!(t.found, brute);
    }

    #[test]
    fn missing_rows_are_seeded_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "toy.txt", "cat 0.5 0.5\n");
        let vocab = toy_vocab(&["cat", "bird"]);
        let rng = SeededRng::new(9);
        let a = load_embeddings(&p, &vocab, &rng).unwrap();
        let b = load_embeddings(&p, &vocab, &rng).unwrap();
        assert_eq!(a.row(vocab.id("bird")), b.row(vocab.id("bird")));
        assert!(a.row(vocab.id("bird")).iter().any(|&v| v != 0.0));
        let spread = a.row(vocab.id("bird")).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(spread < 1.0, "N(0, 0.01) row out of scale: {spread}");
    }

    #[test]
    fn pad_row_is_zero() {
        let vocab = toy_vocab(&["cat"]);
        let t = random_table(&vocab, 4, &SeededRng::new(1));
        assert_eq!(t.row(PAD_ID), &[0.0; 4]);
        assert!(t.row(vocab.id("cat")).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn dimension_change_mid_file_errors_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "bad.txt", "cat 1 2 3\ndog 1 2\n");
        let vocab = toy_vocab(&["cat", "dog"]);
        let err = load_embeddings(&p, &vocab, &SeededRng::new(1)).unwrap_err();
        match err {
            GaError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn unreadable_float_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "bad.txt", "cat 1 x 3\n");
        let vocab = toy_vocab(&["cat"]);
        assert!(load_embeddings(&p, &vocab, &SeededRng::new(1)).is_err());
    }
}
