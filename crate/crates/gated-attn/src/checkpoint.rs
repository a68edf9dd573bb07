//! Binary checkpoint format. Little-endian throughout:
//!
//!   magic "GATCKPT1" | version u32
//!   config   n u32, then (key, value) length-prefixed strings
//!   vocab    n u32, tokens in id order
//!   labels   n u32, names in id order
//!   seed u64 | rng word position u128
//!   params   n u32, each: name, ndim u32, dims u32..., values f64...
//!
//! A checkpoint is self-contained: loading rebuilds the config, vocab, label
//! map, and model weights, and the restored model predicts bit-identically.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::config::RunConfig;
use crate::data::{EmbeddingTable, LabelMap, Vocab};
use crate::error::{GaError, Result};
use crate::model::GaNet;
use crate::stochastic::SeededRng;

pub const MAGIC: &[u8; 8] = b"GATCKPT1";
pub const VERSION: u32 = 1;

pub struct CheckpointData {
    pub config: BTreeMap<String, String>,
    pub vocab_tokens: Vec<String>,
    pub label_names: Vec<String>,
    pub seed: u64,
    pub word_pos: u128,
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
}

fn put_str(out: &mut impl Write, s: &str) -> std::io::Result<()> {
    out.write_all(&(s.len() as u32).to_le_bytes())?;
    out.write_all(s.as_bytes())
}

pub fn save_checkpoint(
    path: &Path,
    model: &GaNet,
    config: &BTreeMap<String, String>,
    vocab: &Vocab,
    labels: &LabelMap,
    seed: u64,
    word_pos: u128,
) -> Result<()> {
    let io_err = |e| GaError::io(path, e);
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    let inner = |out: &mut BufWriter<std::fs::File>| -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(config.len() as u32).to_le_bytes())?;
        for (k, v) in config {
            put_str(out, k)?;
            put_str(out, v)?;
        }
        out.write_all(&(vocab.len() as u32).to_le_bytes())?;
        for t in vocab.tokens() {
            put_str(out, t)?;
        }
        out.write_all(&(labels.len() as u32).to_le_bytes())?;
        for n in labels.names() {
            put_str(out, n)?;
        }
        out.write_all(&seed.to_le_bytes())?;
        out.write_all(&word_pos.to_le_bytes())?;
        let tensors = model.named_tensors();
        out.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &tensors {
            put_str(out, name)?;
            let shape = t.shape();
            out.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                out.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in t.data().iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()
    };
    inner(&mut out).map_err(io_err)
}

struct Cursor<R> {
    r: R,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.r
            .read_exact(&mut buf)
            .map_err(|_| GaError::Checkpoint("unexpected end of file".into()))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.bytes(16)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        if n > 1 << 24 {
            return Err(GaError::Checkpoint(format!("implausible string length {n}")));
        }
        String::from_utf8(self.bytes(n)?)
            .map_err(|_| GaError::Checkpoint("non-utf8 string".into()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointData> {
    let file = std::fs::File::open(path).map_err(|e| GaError::io(path, e))?;
    let mut c = Cursor {
        r: BufReader::new(file),
    };
    if c.bytes(8)?.as_slice() != MAGIC {
        return Err(GaError::Checkpoint("bad magic, not a checkpoint".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(GaError::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let mut config = BTreeMap::new();
    for _ in 0..c.u32()? {
        let k = c.string()?;
        let v = c.string()?;
        config.insert(k, v);
    }
    let vocab_tokens = (0..c.u32()?)
        .map(|_| c.string())
        .collect::<Result<Vec<_>>>()?;
    let label_names = (0..c.u32()?)
        .map(|_| c.string())
        .collect::<Result<Vec<_>>>()?;
    let seed = c.u64()?;
    let word_pos = c.u128()?;
    let n_params = c.u32()? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = c.string()?;
        let ndim = c.u32()? as usize;
        if ndim > 8 {
            return Err(GaError::Checkpoint(format!("implausible rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = c.bytes(n * 8)?;
        let values = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        params.push((name, shape, values));
    }
    Ok(CheckpointData {
        config,
        vocab_tokens,
        label_names,
        seed,
        word_pos,
        params,
    })
}

/// Rebuilds a ready-to-run model from a checkpoint.
pub fn load_model(path: &Path) -> Result<(GaNet, RunConfig, Vocab, LabelMap)> {
    let data = load_checkpoint(path)?;
    let mut cfg = RunConfig::default();
    for (k, v) in &data.config {
        cfg.set(k, v)?;
    }
    let vocab = Vocab::from_tokens(data.vocab_tokens)?;
    let labels = LabelMap::from_names(data.label_names);
    let table = EmbeddingTable {
        data: vec![0.0; vocab.len() * cfg.model.embed_dim],
        vocab_size: vocab.len(),
        dim: cfg.model.embed_dim,
        found: 0,
    };
    let model = GaNet::new(
        &cfg.model,
        &table,
        labels.len(),
        &SeededRng::new(cfg.train.seed),
    )?;
    let mut expected: BTreeMap<String, crate::autodiff::Tensor> =
        model.named_tensors().into_iter().collect();
    for (name, shape, values) in data.params {
        let t = expected.remove(&name).ok_or_else(|| {
            GaError::Checkpoint(format!("checkpoint carries unknown parameter `{name}`"))
        })?;
        if t.shape() != shape.as_slice() {
            return Err(GaError::Checkpoint(format!(
                "parameter `{name}` has shape {:?}, expected {:?}",
                shape,
                t.shape()
            )));
        }
        t.data_mut().copy_from_slice(&values);
    }
    if let Some(missing) = expected.keys().next() {
        return Err(GaError::Checkpoint(format!(
            "checkpoint is missing parameter `{missing}`"
        )));
    }
    Ok((model, cfg, vocab, labels))
}
