//! End-to-end tests of the command-line interface: full pipeline runs,
//! output layout, metric formats, determinism, and the exit-code contract.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_gated-attn");

fn run(args: &[&str], envs: &[(&str, &str)]) -> (i32, String, String) {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary should execute");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn kv(stdout: &str) -> HashMap<String, String> {
    stdout
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn synth(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let (code, _, err) = run(
        &[
            "synth-data",
            "--out",
            data.to_str().unwrap(),
            "--examples",
            "120",
            "--vocab",
            "30",
            "--seq-len",
            "7",
            "--keywords",
            "4",
            "--seed",
            "11",
        ],
        &[],
    );
    assert_eq!(code, 0, "synth-data failed: {err}");
    data
}

fn train(dir: &Path, data: &Path, extra: &[&str]) -> (PathBuf, HashMap<String, String>) {
    let out = dir.join("run");
    let mut args: Vec<String> = [
        "train",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "11",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for (k, v) in [
        ("train_path", format!("{}/train.tsv", data.display())),
        ("val_path", format!("{}/val.tsv", data.display())),
        ("test_path", format!("{}/test.tsv", data.display())),
        ("embed_dim", "10".into()),
        ("hidden_dim", "6".into()),
        ("attn_hidden", "4".into()),
        ("aux_hidden", "3".into()),
        ("epochs", "3".into()),
        ("batch_size", "16".into()),
        ("lr", "0.01".into()),
        ("lambda", "0.0001".into()),
    ] {
        args.push("--set".into());
        args.push(format!("{k}={v}"));
    }
    args.extend(extra.iter().map(|s| s.to_string()));
    let argrefs: Vec<&str> = args.iter().map(String::as_str).collect();
    let (code, stdout, err) = run(&argrefs, &[]);
    assert_eq!(code, 0, "train failed: {err}");
    (out, kv(&stdout))
}

#[test]
fn full_pipeline_layout_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let (out, metrics) = train(dir.path(), &data, &[]);

    for key in [
        "threads",
        "examples_train",
        "examples_val",
        "best_epoch",
        "best_val_acc",
        "best_val_density",
        "diverged",
        "test_accuracy",
        "test_density",
        "attention_flops",
        "attention_flops_dense",
        "flops_ratio",
    ] {
        assert!(metrics.contains_key(key), "missing metric {key}");
    }
    assert_eq!(metrics["diverged"], "false");

    for file in ["manifest.json", "checkpoint.bin", "report.log", "vocab.tsv", "labels.tsv"] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    assert!(out.join("records").is_dir());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["layout"]["checkpoint"], "checkpoint.bin");
    assert_eq!(manifest["config"]["mechanism"], "gated");

    let report = std::fs::read_to_string(out.join("report.log")).unwrap();
    assert_eq!(report.lines().count(), 3);
    for (i, line) in report.lines().enumerate() {
        assert!(line.starts_with(&format!("epoch={}", i + 1)), "{line}");
        for field in ["train_loss=", "val_acc=", "val_density=", "wall_ms="] {
            assert!(line.contains(field), "{line}");
        }
    }
}

#[test]
fn eval_reproduces_training_test_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let (out, train_metrics) = train(dir.path(), &data, &[]);
    let ck = out.join("checkpoint.bin");
    let (code, stdout, err) = run(
        &[
            "eval",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--data",
            data.join("test.tsv").to_str().unwrap(),
            "--gold",
            data.join("test.gold.tsv").to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code, 0, "eval failed: {err}");
    let m = kv(&stdout);
    assert_eq!(m["accuracy"], train_metrics["test_accuracy"]);
    assert_eq!(m["density"], train_metrics["test_density"]);
    assert_eq!(m["attention_flops"], train_metrics["attention_flops"]);
    assert!(m.contains_key("gate_precision"));
    assert!(m.contains_key("gate_recall"));
    let ratio: f64 = m["flops_ratio"].parse().unwrap();
    let density: f64 = m["density"].parse().unwrap();
    assert!((ratio - density).abs() < 1e-4);
}

#[test]
fn training_is_deterministic_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let (out1, _) = train(&dir.path().join("a"), &data, &[]);
    let (out2, _) = train(&dir.path().join("b"), &data, &[]);
    let ck1 = std::fs::read(out1.join("checkpoint.bin")).unwrap();
    let ck2 = std::fs::read(out2.join("checkpoint.bin")).unwrap();
    assert_eq!(ck1, ck2, "same seed and data must give identical checkpoints");
}

#[test]
fn explain_exports_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let (out, _) = train(dir.path(), &data, &[]);
    let ck = out.join("checkpoint.bin");

    let (code, stdout, err) = run(
        &[
            "explain",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--data",
            data.join("test.tsv").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--limit",
            "4",
        ],
        &[],
    );
    assert_eq!(code, 0, "explain failed: {err}");
    assert_eq!(kv(&stdout)["records"], "4");
    let jsonl = std::fs::read_to_string(out.join("records/explain.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 4);
    for line in jsonl.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        let tokens = rec["tokens"].as_array().unwrap();
        assert_eq!(tokens.len(), rec["gates"].as_array().unwrap().len());
        assert_eq!(tokens.len(), rec["alpha"].as_array().unwrap().len());
        assert!(rec["predicted"].is_string());
        assert!(rec["gold"].is_string());
        let alpha_sum: f64 = rec["alpha"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .sum();
        assert!((alpha_sum - 1.0).abs() < 1e-9);
    }

    let (code, _, err) = run(
        &[
            "explain",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--data",
            data.join("test.tsv").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--limit",
            "4",
            "--format",
            "html_heatmap",
        ],
        &[],
    );
    assert_eq!(code, 0, "html explain failed: {err}");
    let html = std::fs::read_to_string(out.join("records/explain.html")).unwrap();
    assert!(html.contains("<!DOCTYPE html>"));
    assert!(html.contains("class=\"tok"));
}

#[test]
fn sweep_reports_one_line_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let train_path = format!("train_path={}/train.tsv", data.display());
    let (code, stdout, err) = run(
        &[
            "sweep",
            "--set",
            &train_path,
            "--set",
            "embed_dim=8",
            "--set",
            "hidden_dim=5",
            "--set",
            "attn_hidden=3",
            "--set",
            "aux_hidden=3",
            "--set",
            "epochs=2",
            "--set",
            "lr=0.01",
            "--set",
            "batch_size=16",
            "--param",
            "tau",
            "--values",
            "0.5,1.0",
            "--seed",
            "3",
        ],
        &[],
    );
    assert_eq!(code, 0, "sweep failed: {err}");
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("tau=0.5 "));
    assert!(lines[1].starts_with("tau=1.0 "));
    for line in lines {
        assert!(line.contains("val_acc=") && line.contains("best_epoch="));
    }
}

#[test]
fn gate_mode_flag_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let (out, _) = train(dir.path(), &data, &[]);
    let ck = out.join("checkpoint.bin");
    for mode in ["threshold", "sample"] {
        let (code, stdout, err) = run(
            &[
                "eval",
                "--checkpoint",
                ck.to_str().unwrap(),
                "--data",
                data.join("test.tsv").to_str().unwrap(),
                "--gate-mode",
                mode,
            ],
            &[],
        );
        assert_eq!(code, 0, "{mode} failed: {err}");
        assert!(kv(&stdout).contains_key("accuracy"));
    }
}

#[test]
fn exit_code_contract() {
    let dir = tempfile::tempdir().unwrap();

    // usage error
    let (code, _, _) = run(&["no-such-command"], &[]);
    assert_eq!(code, 1);

    // help is not an error
    let (code, _, _) = run(&["--help"], &[]);
    assert_eq!(code, 0);

    // off-grid hyperparameter
    let (code, _, err) = run(
        &["train", "--out", dir.path().join("x").to_str().unwrap(), "--set", "lr=0.42"],
        &[],
    );
    assert_eq!(code, 1);
    assert!(err.contains("off the tuning grid"));

    // missing input file
    let (code, _, _) = run(
        &[
            "eval",
            "--checkpoint",
            "/nonexistent/ck.bin",
            "--data",
            "/nonexistent/data.tsv",
        ],
        &[],
    );
    assert_eq!(code, 1);

    // bad thread count from the environment
    let (code, _, err) = run(
        &["synth-data", "--out", dir.path().join("y").to_str().unwrap()],
        &[("GATED_ATTN_THREADS", "zero")],
    );
    assert_eq!(code, 1);
    assert!(err.contains("GATED_ATTN_THREADS"));

    // unknown --set key
    let (code, _, err) = run(
        &[
            "train",
            "--out",
            dir.path().join("z").to_str().unwrap(),
            "--set",
            "nonsense=1",
        ],
        &[],
    );
    assert_eq!(code, 1);
    assert!(err.contains("unknown config key"));
}

#[test]
fn config_file_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(
        &cfg_path,
        format!(
            "# sandbox config\ntrain_path={}/train.tsv\nval_path={}/val.tsv\n\
             embed_dim=10\nhidden_dim=6\nattn_hidden=4\naux_hidden=3\n\
             epochs=2\nbatch_size=16\nlr=0.005\nmechanism=soft\n",
            data.display(),
            data.display()
        ),
    )
    .unwrap();
    let out = dir.path().join("cfgrun");
    let (code, stdout, err) = run(
        &[
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--set",
            "epochs=1",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code, 0, "train failed: {err}");
    assert!(kv(&stdout)["best_epoch"].parse::<usize>().unwrap() <= 1);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    // --set wins over the file
    assert_eq!(manifest["config"]["epochs"], "1");
    assert_eq!(manifest["config"]["mechanism"], "soft");
    // soft attention means every valid position is open
    let report = std::fs::read_to_string(out.join("report.log")).unwrap();
    assert!(report.contains("val_density=1.0000"));
}
