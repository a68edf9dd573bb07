//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage/config/input problems, 2 for
//! runtime failures. All metrics print as one `key=value` per line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_model, save_checkpoint};
use crate::config::{parse_kv_text, Mechanism, RunConfig, RunManifest};
use crate::data::{
    encode_examples, make_batches, load_embeddings, random_table, read_dataset, synth_keyword_task,
    EmbeddingTable, EncodedExample, LabelMap, RawExample, Vocab,
};
use crate::error::{GaError, Result};
use crate::metrics::{
    count_attention_flops, gate_precision_recall, write_html_heatmap, write_json_lines,
    write_metrics, AttentionRecord, FlopsReport,
};
use crate::model::GaNet;
use crate::stochastic::{GateMode, SeededRng};
use crate::train::{evaluate, train_model};

pub const THREADS_ENV: &str = "GATED_ATTN_THREADS";

#[derive(Parser)]
#[command(name = "gated-attn", version, about = "gated sparse attention for sequence classification")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write checkpoint, report, and manifest to --out.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset and print metrics.
    Eval(EvalArgs),
    /// Export per-example attention explanations.
    Explain(ExplainArgs),
    /// Train once per value of a hyperparameter and report each result.
    Sweep(SweepArgs),
    /// Generate a synthetic keyword-classification dataset.
    SynthData(SynthArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to a key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline override, repeatable: --set key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Checkpoint produced by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset to evaluate on.
    #[arg(long)]
    data: PathBuf,
    /// How hard gates are drawn from the auxiliary probabilities.
    #[arg(long = "gate-mode")]
    gate_mode: Option<GateModeArg>,
    /// Optional gold rationale positions (one comma-separated list per line,
    /// aligned with --data) for gate precision/recall.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Also write the metric lines to <out>/eval.log.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "gate-mode")]
    gate_mode: Option<GateModeArg>,
    /// Output directory; records land in <out>/records/.
    #[arg(long)]
    out: PathBuf,
    /// Export format.
    #[arg(long, default_value = "json_lines")]
    format: RecordFormat,
    /// Explain at most this many examples.
    #[arg(long, default_value_t = 50)]
    limit: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Config key to sweep.
    #[arg(long)]
    param: String,
    /// Comma-separated values to try.
    #[arg(long)]
    values: String,
    /// Optional directory for sweep.log.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for train/val/test TSV files and gold positions.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    examples: usize,
    #[arg(long = "vocab", default_value_t = 60)]
    vocab_size: usize,
    #[arg(long = "seq-len", default_value_t = 12)]
    seq_len: usize,
    #[arg(long, default_value_t = 6)]
    keywords: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Clone, Copy)]
struct GateModeArg(GateMode);

impl std::str::FromStr for GateModeArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.parse::<GateMode>()
            .map(GateModeArg)
            .map_err(|e| e.to_string())
    }
}

#[derive(Clone, Copy)]
enum RecordFormat {
    JsonLines,
    HtmlHeatmap,
}

impl std::str::FromStr for RecordFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "json_lines" => Ok(RecordFormat::JsonLines),
            "html_heatmap" => Ok(RecordFormat::HtmlHeatmap),
            other => Err(format!(
                "unknown format '{other}' (expected json_lines or html_heatmap)"
            )),
        }
    }
}

/// Parses arguments, dispatches, and maps every failure to the exit-code
/// contract.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Explain(a) => cmd_explain(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::SynthData(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => 0,
        // a downstream consumer (head, less) closing stdout is not a failure
        Err(GaError::Io { source, .. })
            if source.kind() == std::io::ErrorKind::BrokenPipe =>
        {
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Worker count from GATED_ATTN_THREADS. This build executes sequentially;
/// the variable is validated and reported so harnesses relying on it fail
/// loudly rather than silently.
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v.parse().map_err(|_| {
                GaError::Config(format!("{THREADS_ENV} expects a positive integer, got '{v}'"))
            })?;
            if n == 0 {
                return Err(GaError::Config(format!("{THREADS_ENV} must be at least 1")));
            }
            Ok(n)
        }
        Err(_) => Ok(1),
    }
}

fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| GaError::io(path, e))?;
        let pairs = parse_kv_text(&text, &path.display().to_string())?;
        cfg.apply(&pairs)?;
    }
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| {
            GaError::Config(format!("--set expects key=value, got '{kv}'"))
        })?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Prepared {
    train: Vec<EncodedExample>,
    val: Vec<EncodedExample>,
    test: Option<Vec<EncodedExample>>,
    vocab: Vocab,
    labels: LabelMap,
}

fn prepare_data(cfg: &RunConfig, rng: &SeededRng) -> Result<Prepared> {
    let train_path = cfg.data.train_path.as_ref().ok_or_else(|| {
        GaError::Config("train_path is required (set it in the config or via --set)".into())
    })?;
    let mut train_raw = read_dataset(Path::new(train_path), cfg.data.data_format)?;
    let val_raw = match &cfg.data.val_path {
        Some(p) => read_dataset(Path::new(p), cfg.data.data_format)?,
        None => {
            let mut idx: Vec<usize> = (0..train_raw.len()).collect();
            rng.derive("split").shuffle(&mut idx);
            let n_val = ((train_raw.len() as f64 * cfg.data.val_fraction).round() as usize)
                .clamp(1, train_raw.len().saturating_sub(1).max(1));
            let chosen: std::collections::HashSet<usize> =
                idx[..n_val].iter().copied().collect();
            let mut val = Vec::with_capacity(n_val);
            let mut rest = Vec::with_capacity(train_raw.len() - n_val);
            for (i, ex) in train_raw.into_iter().enumerate() {
                if chosen.contains(&i) {
                    val.push(ex);
                } else {
                    rest.push(ex);
                }
            }
            train_raw = rest;
            val
        }
    };
    if train_raw.is_empty() || val_raw.is_empty() {
        return Err(GaError::contract(
            "need at least one training and one validation example",
        ));
    }
    let vocab = Vocab::build(
        train_raw.iter().map(|e| e.tokens.as_slice()),
        cfg.data.min_freq,
    );
    let labels = LabelMap::build(&train_raw);
    let train = encode_examples(&train_raw, &vocab, &labels)?;
    let val = encode_examples(&val_raw, &vocab, &labels)?;
    let test = match &cfg.data.test_path {
        Some(p) => {
            let raw = read_dataset(Path::new(p), cfg.data.data_format)?;
            Some(encode_examples(&raw, &vocab, &labels)?)
        }
        None => None,
    };
    Ok(Prepared {
        train,
        val,
        test,
        vocab,
        labels,
    })
}

fn embedding_table(cfg: &RunConfig, vocab: &Vocab, rng: &SeededRng) -> Result<EmbeddingTable> {
    match &cfg.data.embeddings_path {
        Some(p) => load_embeddings(Path::new(p), vocab, &rng.derive("emb")),
        None => Ok(random_table(vocab, cfg.model.embed_dim, &rng.derive("emb"))),
    }
}

fn attention_flops(model: &GaNet, scored: usize, total: usize) -> (FlopsReport, FlopsReport) {
    let d = 2 * model.encoder.hidden_dim;
    let a = model.scorer.hidden_dim;
    let gaussian = model.mechanism == Mechanism::Local && !model.window.sigma_infinite;
    let sparse = count_attention_flops(scored, total, d, a, gaussian);
    let dense = count_attention_flops(total, total, d, a, false);
    (sparse, dense)
}

fn format4(v: f64) -> String {
    format!("{v:.4}")
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let threads = thread_count()?;
    let cfg = resolve_config(&args.cfg)?;
    std::fs::create_dir_all(args.out.join("records"))
        .map_err(|e| GaError::io(&args.out, e))?;
    let rng = SeededRng::new(cfg.train.seed);
    let prepared = prepare_data(&cfg, &rng)?;
    let table = embedding_table(&cfg, &prepared.vocab, &rng)?;
    if cfg.data.embeddings_path.is_some() && table.dim != cfg.model.embed_dim {
        return Err(GaError::Config(format!(
            "embedding file dim {} does not match embed_dim {}",
            table.dim, cfg.model.embed_dim
        )));
    }
    let model = GaNet::new(&cfg.model, &table, prepared.labels.len(), &rng)?;
    RunManifest::new(&cfg).write(&args.out)?;
    prepared.vocab.save(&args.out.join("vocab.tsv"))?;
    prepared.labels.save(&args.out.join("labels.tsv"))?;
    let report_path = args.out.join("report.log");
    let mut report =
        std::fs::File::create(&report_path).map_err(|e| GaError::io(&report_path, e))?;
    let outcome = train_model(
        &model,
        &cfg,
        &prepared.train,
        &prepared.val,
        &rng,
        &mut report,
    )?;
    save_checkpoint(
        &args.out.join("checkpoint.bin"),
        &model,
        &cfg.to_map(),
        &prepared.vocab,
        &prepared.labels,
        cfg.train.seed,
        0,
    )?;
    let mut lines = vec![
        ("threads", threads.to_string()),
        ("examples_train", prepared.train.len().to_string()),
        ("examples_val", prepared.val.len().to_string()),
        ("best_epoch", outcome.best_epoch.to_string()),
        ("best_val_acc", format4(outcome.best_val_acc)),
        ("best_val_density", format4(outcome.best_val_density)),
        ("diverged", outcome.diverged.to_string()),
    ];
    if let Some(test) = &prepared.test {
        let mut eval_rng = rng.derive("eval:gates");
        let stats = evaluate(
            &model,
            test,
            cfg.train.batch_size,
            cfg.train.max_len,
            cfg.train.gate_mode,
            Some(&mut eval_rng),
        )?;
        let (sparse, dense) =
            attention_flops(&model, stats.scored_positions, stats.valid_positions);
        lines.push(("test_accuracy", format4(stats.accuracy)));
        lines.push(("test_density", format4(stats.density)));
        lines.push(("test_fallbacks", stats.fallbacks.to_string()));
        lines.push(("attention_flops", sparse.total.to_string()));
        lines.push(("attention_flops_dense", dense.total.to_string()));
        lines.push((
            "flops_ratio",
            format!("{:.6}", sparse.total as f64 / dense.total as f64),
        ));
    }
    write_metrics(std::io::stdout().lock(), &lines)
}

struct LoadedModel {
    model: GaNet,
    cfg: RunConfig,
    vocab: Vocab,
    labels: LabelMap,
}

fn load_for_inference(
    checkpoint: &Path,
    args: &ConfigArgs,
    gate_mode: Option<GateModeArg>,
) -> Result<LoadedModel> {
    let (model, mut cfg, vocab, labels) = load_model(checkpoint)?;
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| {
            GaError::Config(format!("--set expects key=value, got '{kv}'"))
        })?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(GateModeArg(m)) = gate_mode {
        cfg.train.gate_mode = m;
    }
    Ok(LoadedModel {
        model,
        cfg,
        vocab,
        labels,
    })
}

fn read_gold(path: &Path, n: usize) -> Result<Vec<Vec<usize>>> {
    let text = std::fs::read_to_string(path).map_err(|e| GaError::io(path, e))?;
    let mut gold = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            gold.push(Vec::new());
            continue;
        }
        let mut positions = Vec::new();
        for part in line.split(',') {
            positions.push(part.trim().parse().map_err(|_| GaError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("expected a position index, got '{part}'"),
            })?);
        }
        gold.push(positions);
    }
    if gold.len() != n {
        return Err(GaError::contract(format!(
            "gold file has {} lines but the dataset has {n} examples",
            gold.len()
        )));
    }
    Ok(gold)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    thread_count()?;
    let loaded = load_for_inference(&args.checkpoint, &args.cfg, args.gate_mode)?;
    let raw = read_dataset(&args.data, loaded.cfg.data.data_format)?;
    let encoded = encode_examples(&raw, &loaded.vocab, &loaded.labels)?;
    let rng = SeededRng::new(loaded.cfg.train.seed);
    let mut eval_rng = rng.derive("eval:gates");
    let stats = evaluate(
        &loaded.model,
        &encoded,
        loaded.cfg.train.batch_size,
        loaded.cfg.train.max_len,
        loaded.cfg.train.gate_mode,
        Some(&mut eval_rng),
    )?;
    let (sparse, dense) =
        attention_flops(&loaded.model, stats.scored_positions, stats.valid_positions);
    let mut lines = vec![
        ("examples", stats.examples.to_string()),
        ("accuracy", format4(stats.accuracy)),
        ("density", format4(stats.density)),
        ("open_gates", stats.open_gates.to_string()),
        ("valid_positions", stats.valid_positions.to_string()),
        ("scored_positions", stats.scored_positions.to_string()),
        ("fallbacks", stats.fallbacks.to_string()),
        ("attention_flops", sparse.total.to_string()),
        ("attention_flops_dense", dense.total.to_string()),
        (
            "flops_ratio",
            format!("{:.6}", sparse.total as f64 / dense.total as f64),
        ),
    ];
    if let Some(gold_path) = &args.gold {
        let gold = read_gold(gold_path, encoded.len())?;
        let (open_mask, gold_mask) = gate_masks(
            &loaded.model,
            &encoded,
            &gold,
            &loaded.cfg,
            &rng,
        )?;
        let (precision, recall) = gate_precision_recall(&open_mask, &gold_mask);
        lines.push(("gate_precision", format4(precision)));
        lines.push(("gate_recall", format4(recall)));
    }
    write_metrics(std::io::stdout().lock(), &lines)?;
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| GaError::io(out, e))?;
        let path = out.join("eval.log");
        let file = std::fs::File::create(&path).map_err(|e| GaError::io(&path, e))?;
        write_metrics(file, &lines)?;
    }
    Ok(())
}

/// Flattened open/gold masks over every valid position of every example, in
/// dataset order.
fn gate_masks(
    model: &GaNet,
    encoded: &[EncodedExample],
    gold: &[Vec<usize>],
    cfg: &RunConfig,
    rng: &SeededRng,
) -> Result<(Vec<bool>, Vec<bool>)> {
    let mut eval_rng = rng.derive("eval:gates");
    let mut open_mask = Vec::new();
    let mut gold_mask = Vec::new();
    for batch in make_batches(encoded, cfg.train.batch_size, cfg.train.max_len, None)? {
        let out = model.forward_eval(
            &batch,
            cfg.train.gate_mode,
            Some(&mut eval_rng),
        )?;
        for bi in 0..batch.b {
            let len = batch.lengths[bi];
            let ex = batch.example_indices[bi];
            for t in 0..len {
                open_mask.push(out.gates[bi * batch.t_max + t]);
                gold_mask.push(gold[ex].contains(&t));
            }
        }
    }
    Ok((open_mask, gold_mask))
}

fn cmd_explain(args: ExplainArgs) -> Result<()> {
    thread_count()?;
    let loaded = load_for_inference(&args.checkpoint, &args.cfg, args.gate_mode)?;
    let raw = read_dataset(&args.data, loaded.cfg.data.data_format)?;
    let take = raw.len().min(args.limit.max(1));
    let raw: Vec<RawExample> = raw.into_iter().take(take).collect();
    let encoded = encode_examples(&raw, &loaded.vocab, &loaded.labels)?;
    let rng = SeededRng::new(loaded.cfg.train.seed);
    let mut eval_rng = rng.derive("eval:gates");
    let mut records: Vec<Option<AttentionRecord>> = vec![None; encoded.len()];
    for batch in make_batches(
        &encoded,
        loaded.cfg.train.batch_size,
        loaded.cfg.train.max_len,
        None,
    )? {
        let out = loaded.model.forward_eval(
            &batch,
            loaded.cfg.train.gate_mode,
            Some(&mut eval_rng),
        )?;
        for bi in 0..batch.b {
            let len = batch.lengths[bi];
            let base = bi * batch.t_max;
            let ex = batch.example_indices[bi];
            records[ex] = Some(AttentionRecord {
                tokens: raw[ex].tokens[..len].to_vec(),
                gates: (0..len).map(|t| out.gates[base + t] as u8).collect(),
                alpha: out.alpha[base..base + len].to_vec(),
                p: if out.p.is_empty() {
                    Vec::new()
                } else {
                    out.p[base..base + len].to_vec()
                },
                predicted: loaded.labels.name(out.predicted[bi]).to_string(),
                gold: raw[ex].label.clone(),
            });
        }
    }
    let records: Vec<AttentionRecord> = records.into_iter().map(Option::unwrap).collect();
    let dir = args.out.join("records");
    std::fs::create_dir_all(&dir).map_err(|e| GaError::io(&dir, e))?;
    let path = match args.format {
        RecordFormat::JsonLines => {
            let p = dir.join("explain.jsonl");
            write_json_lines(&p, &records)?;
            p
        }
        RecordFormat::HtmlHeatmap => {
            let p = dir.join("explain.html");
            write_html_heatmap(&p, &records)?;
            p
        }
    };
    write_metrics(
        std::io::stdout().lock(),
        &[
            ("records", records.len().to_string()),
            ("path", path.display().to_string()),
        ],
    )
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    thread_count()?;
    let base = resolve_config(&args.cfg)?;
    let values: Vec<&str> = args
        .values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(GaError::Config("--values needs at least one value".into()));
    }
    let rng = SeededRng::new(base.train.seed);
    let prepared = prepare_data(&base, &rng)?;
    let mut text = String::new();
    for v in values {
        let mut cfg = base.clone();
        cfg.set(&args.param, v)?;
        cfg.validate()?;
        let table = embedding_table(&cfg, &prepared.vocab, &rng)?;
        let model = GaNet::new(&cfg.model, &table, prepared.labels.len(), &rng)?;
        let mut sink = std::io::sink();
        let outcome = train_model(
            &model,
            &cfg,
            &prepared.train,
            &prepared.val,
            &rng,
            &mut sink,
        )?;
        text.push_str(&format!(
            "{}={} val_acc={} val_density={} best_epoch={}\n",
            args.param,
            v,
            format4(outcome.best_val_acc),
            format4(outcome.best_val_density),
            outcome.best_epoch
        ));
    }
    print!("{text}");
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| GaError::io(out, e))?;
        let path = out.join("sweep.log");
        std::fs::write(&path, &text).map_err(|e| GaError::io(&path, e))?;
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    thread_count()?;
    if args.examples < 10 {
        return Err(GaError::Config("--examples must be at least 10".into()));
    }
    let data = synth_keyword_task(
        args.examples,
        args.vocab_size,
        args.seq_len,
        args.keywords,
        args.seed,
    )?;
    std::fs::create_dir_all(&args.out).map_err(|e| GaError::io(&args.out, e))?;
    let n = data.examples.len();
    let n_test = (n / 10).max(1);
    let n_val = (n / 10).max(1);
    let n_train = n - n_val - n_test;
    let splits = [
        ("train", 0..n_train),
        ("val", n_train..n_train + n_val),
        ("test", n_train + n_val..n),
    ];
    let mut lines = Vec::new();
    for (name, range) in splits {
        let tsv = args.out.join(format!("{name}.tsv"));
        let gold = args.out.join(format!("{name}.gold.tsv"));
        let mut tsv_text = String::new();
        let mut gold_text = String::new();
        for i in range.clone() {
            let ex = &data.examples[i];
            tsv_text.push_str(&format!("{}\t{}\n", ex.label, ex.tokens.join(" ")));
            gold_text.push_str(&format!("{}\n", data.gold_positions[i]));
        }
        std::fs::write(&tsv, tsv_text).map_err(|e| GaError::io(&tsv, e))?;
        std::fs::write(&gold, gold_text).map_err(|e| GaError::io(&gold, e))?;
        lines.push((name, range.len().to_string()));
    }
    lines.push(("vocab", args.vocab_size.to_string()));
    lines.push(("keywords", args.keywords.to_string()));
    lines.push(("seq_len", args.seq_len.to_string()));
    write_metrics(std::io::stdout().lock(), &lines)
}
