//! Flat key=value configuration with typed accessors, the tuning grids the
//! model family is searched over, and the run manifest written next to every
//! training output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::DataFormat;
use crate::error::{GaError, Result};
use crate::stochastic::GateMode;

pub const LR_GRID: [f64; 7] = [1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2];
pub const BATCH_GRID: [usize; 5] = [8, 16, 32, 64, 128];
pub const TAU_GRID: [f64; 4] = [0.5, 1.0, 1.5, 2.0];
pub const LAMBDA_GRID: [f64; 7] = [0.4e-5, 0.5e-5, 1.0e-5, 0.4e-4, 0.5e-4, 1.0e-4, 1.0e-3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mechanism {
    Soft,
    Gated,
    Local,
}

impl std::str::FromStr for Mechanism {
    type Err = GaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(Mechanism::Soft),
            "gated" => Ok(Mechanism::Gated),
            "local" => Ok(Mechanism::Local),
            other => Err(GaError::Config(format!(
                "unknown mechanism '{other}' (expected soft, gated, or local)"
            ))),
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mechanism::Soft => "soft",
            Mechanism::Gated => "gated",
            Mechanism::Local => "local",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub mechanism: Mechanism,
    pub aux_variant: crate::layers::AuxVariant,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attn_hidden: usize,
    pub aux_hidden: usize,
    pub layers: usize,
    pub trainable_embeddings: bool,
    pub window: usize,
    pub sigma_infinite: bool,
    /// Debug switch: bypass gate sampling during training so every gate is
    /// exactly 1. A gated model trained this way must match the soft model.
    pub pin_gates: bool,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub tau: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub max_len: usize,
    pub clip: f64,
    pub seed: u64,
    pub gate_mode: GateMode,
    pub allow_off_grid: bool,
}

#[derive(Debug, Clone)]
pub struct DataConfig {
    pub train_path: Option<String>,
    pub val_path: Option<String>,
    pub test_path: Option<String>,
    pub data_format: DataFormat,
    pub embeddings_path: Option<String>,
    pub min_freq: usize,
    /// Tail fraction of the training set held out when no val_path is given.
    pub val_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig {
                mechanism: Mechanism::Gated,
                aux_variant: crate::layers::AuxVariant::Lstm,
                embed_dim: 100,
                hidden_dim: 150,
                attn_hidden: 150,
                aux_hidden: 64,
                layers: 1,
                trainable_embeddings: true,
                window: 41,
                sigma_infinite: false,
                pin_gates: false,
            },
            train: TrainConfig {
                lr: 1e-3,
                batch_size: 32,
                tau: 1.0,
                lambda: 1e-5,
                epochs: 5,
                max_len: 400,
                clip: 5.0,
                seed: 42,
                gate_mode: GateMode::Threshold,
                allow_off_grid: false,
            },
            data: DataConfig {
                train_path: None,
                val_path: None,
                test_path: None,
                data_format: DataFormat::TsvLabelText,
                embeddings_path: None,
                min_freq: 1,
                val_fraction: 0.1,
            },
        }
    }
}

/// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv_text(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| GaError::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg: format!("expected key=value, got '{line}'"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| GaError::Config(format!("{key} expects an integer, got '{v}'")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| GaError::Config(format!("{key} expects a number, got '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(GaError::Config(format!(
            "{key} expects true or false, got '{v}'"
        ))),
    }
}

fn on_grid(v: f64, grid: &[f64]) -> bool {
    grid.iter().any(|&g| (v - g).abs() <= 1e-9 * g.abs().max(1.0))
}

impl RunConfig {
    /// Applies overrides in order on top of the current values. Later pairs
    /// win. Unknown keys are errors.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "mechanism" => self.model.mechanism = v.parse()?,
            "aux_variant" => self.model.aux_variant = v.parse()?,
            "embed_dim" => self.model.embed_dim = parse_usize(key, v)?,
            "hidden_dim" => self.model.hidden_dim = parse_usize(key, v)?,
            "attn_hidden" => self.model.attn_hidden = parse_usize(key, v)?,
            "aux_hidden" => self.model.aux_hidden = parse_usize(key, v)?,
            "layers" => self.model.layers = parse_usize(key, v)?,
            "trainable_embeddings" => self.model.trainable_embeddings = parse_bool(key, v)?,
            "window" => self.model.window = parse_usize(key, v)?,
            "sigma_infinite" => self.model.sigma_infinite = parse_bool(key, v)?,
            "pin_gates" => self.model.pin_gates = parse_bool(key, v)?,
            "lr" => self.train.lr = parse_f64(key, v)?,
            "batch_size" => self.train.batch_size = parse_usize(key, v)?,
            "tau" => self.train.tau = parse_f64(key, v)?,
            "lambda" => self.train.lambda = parse_f64(key, v)?,
            "epochs" => self.train.epochs = parse_usize(key, v)?,
            "max_len" => self.train.max_len = parse_usize(key, v)?,
            "clip" => self.train.clip = parse_f64(key, v)?,
            "seed" => {
                self.train.seed = v
                    .parse()
                    .map_err(|_| GaError::Config(format!("seed expects an integer, got '{v}'")))?
            }
            "gate_mode" => self.train.gate_mode = v.parse()?,
            "allow_off_grid" => self.train.allow_off_grid = parse_bool(key, v)?,
            "train_path" => self.data.train_path = Some(v.to_string()),
            "val_path" => self.data.val_path = Some(v.to_string()),
            "test_path" => self.data.test_path = Some(v.to_string()),
            "data_format" => self.data.data_format = v.parse()?,
            "embeddings_path" => self.data.embeddings_path = Some(v.to_string()),
            "min_freq" => self.data.min_freq = parse_usize(key, v)?,
            "val_fraction" => self.data.val_fraction = parse_f64(key, v)?,
            other => return Err(GaError::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Structural checks plus grid membership for the tuned hyperparameters.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        for (name, v) in [
            ("embed_dim", m.embed_dim),
            ("hidden_dim", m.hidden_dim),
            ("attn_hidden", m.attn_hidden),
            ("aux_hidden", m.aux_hidden),
            ("layers", m.layers),
            ("window", m.window),
        ] {
            if v == 0 {
                return Err(GaError::Config(format!("{name} must be positive")));
            }
        }
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 || t.max_len == 0 {
            return Err(GaError::Config(
                "epochs, batch_size, and max_len must be positive".into(),
            ));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;
        if !positive(t.lr) || !positive(t.tau) || !non_negative(t.lambda) {
            return Err(GaError::Config(
                "lr and tau must be positive and lambda non-negative".into(),
            ));
        }
        if !(self.data.val_fraction > 0.0 && self.data.val_fraction < 1.0) {
            return Err(GaError::Config("val_fraction must lie in (0, 1)".into()));
        }
        if !t.allow_off_grid {
            if !on_grid(t.lr, &LR_GRID) {
                return Err(off_grid_err("lr", t.lr, &LR_GRID));
            }
            if !BATCH_GRID.contains(&t.batch_size) {
                return Err(GaError::Config(format!(
                    "batch_size {} is off the tuning grid {:?}; set allow_off_grid=true to override",
                    t.batch_size, BATCH_GRID
                )));
            }
            if !on_grid(t.tau, &TAU_GRID) {
                return Err(off_grid_err("tau", t.tau, &TAU_GRID));
            }
            if !on_grid(t.lambda, &LAMBDA_GRID) {
                return Err(off_grid_err("lambda", t.lambda, &LAMBDA_GRID));
            }
        }
        Ok(())
    }

    /// Every key with its resolved value, sorted, for manifests and
    /// checkpoints.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("mechanism", self.model.mechanism.to_string());
        put("aux_variant", self.model.aux_variant.to_string());
        put("embed_dim", self.model.embed_dim.to_string());
        put("hidden_dim", self.model.hidden_dim.to_string());
        put("attn_hidden", self.model.attn_hidden.to_string());
        put("aux_hidden", self.model.aux_hidden.to_string());
        put("layers", self.model.layers.to_string());
        put(
            "trainable_embeddings",
            self.model.trainable_embeddings.to_string(),
        );
        put("window", self.model.window.to_string());
        put("sigma_infinite", self.model.sigma_infinite.to_string());
        put("pin_gates", self.model.pin_gates.to_string());
        put("lr", format_num(self.train.lr));
        put("batch_size", self.train.batch_size.to_string());
        put("tau", format_num(self.train.tau));
        put("lambda", format_num(self.train.lambda));
        put("epochs", self.train.epochs.to_string());
        put("max_len", self.train.max_len.to_string());
        put("clip", format_num(self.train.clip));
        put("seed", self.train.seed.to_string());
        put("gate_mode", self.train.gate_mode.to_string());
        put("allow_off_grid", self.train.allow_off_grid.to_string());
        if let Some(p) = &self.data.train_path {
            put("train_path", p.clone());
        }
        if let Some(p) = &self.data.val_path {
            put("val_path", p.clone());
        }
        if let Some(p) = &self.data.test_path {
            put("test_path", p.clone());
        }
        put("data_format", self.data.data_format.to_string());
        if let Some(p) = &self.data.embeddings_path {
            put("embeddings_path", p.clone());
        }
        put("min_freq", self.data.min_freq.to_string());
        put("val_fraction", format_num(self.data.val_fraction));
        m
    }
}

fn off_grid_err(name: &str, v: f64, grid: &[f64]) -> GaError {
    GaError::Config(format!(
        "{name} {v} is off the tuning grid {grid:?}; set allow_off_grid=true to override"
    ))
}

fn format_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

#[derive(Serialize)]
pub struct RunManifest {
    pub seed: u64,
    pub config_sha256: String,
    pub config: BTreeMap<String, String>,
    pub layout: ManifestLayout,
}

#[derive(Serialize)]
pub struct ManifestLayout {
    pub checkpoint: String,
    pub report: String,
    pub records: String,
}

impl RunManifest {
    pub fn new(cfg: &RunConfig) -> Self {
        let map = cfg.to_map();
        let mut canonical = String::new();
        for (k, v) in &map {
            let _ = writeln!(canonical, "{k}={v}");
        }
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(64);
        for b in digest {
            let _ = write!(hex, "{b:02x}");
        }
        RunManifest {
            seed: cfg.train.seed,
            config_sha256: hex,
            config: map,
            layout: ManifestLayout {
                checkpoint: "checkpoint.bin".into(),
                report: "report.log".into(),
                records: "records/".into(),
            },
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| GaError::Config(format!("manifest serialization failed: {e}")))?;
        std::fs::write(&path, text).map_err(|e| GaError::io(&path, e))
    }
}
