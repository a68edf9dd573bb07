//! Per-example attention explanations: JSON-lines export for downstream
//! tooling and a self-contained HTML heatmap for eyeballing.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GaError, Result};

/// One explained example. `gates` and `alpha` are aligned with `tokens`;
/// `p` carries the auxiliary gate probabilities and is empty for mechanisms
/// without one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub tokens: Vec<String>,
    pub gates: Vec<u8>,
    pub alpha: Vec<f64>,
    pub p: Vec<f64>,
    pub predicted: String,
    pub gold: String,
}

pub fn write_json_lines(path: &Path, records: &[AttentionRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| GaError::Contract(format!("record serialization failed: {e}")))?;
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| GaError::io(path, e))
}

pub fn read_json_lines(path: &Path) -> Result<Vec<AttentionRecord>> {
    let file = std::fs::File::open(path).map_err(|e| GaError::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GaError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|e| GaError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })?,
        );
    }
    Ok(records)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// Renders every record as a row of tokens. Background opacity scales with
/// the attention weight (normalized per example); tokens behind closed gates
/// render struck through and grey.
pub fn write_html_heatmap(path: &Path, records: &[AttentionRecord]) -> Result<()> {
    let mut html = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\n\
         <title>attention heatmap</title>\n<style>\n\
         body { font-family: sans-serif; margin: 2em; }\n\
         .example { margin-bottom: 1.5em; line-height: 2.0; }\n\
         .meta { color: #444; font-size: 0.9em; margin-bottom: 0.3em; }\n\
         .tok { padding: 2px 4px; margin: 1px; border-radius: 3px; display: inline-block; }\n\
         .closed { text-decoration: line-through; color: #999; }\n\
         </style></head><body>\n<h1>attention heatmap</h1>\n",
    );
    for (i, r) in records.iter().enumerate() {
        let max_alpha = r.alpha.iter().cloned().fold(0.0_f64, f64::max);
        let verdict = if r.predicted == r.gold { "right" } else { "wrong" };
        html.push_str(&format!(
            "<div class=\"example\"><div class=\"meta\">#{} predicted={} gold={} ({})</div><div>\n",
            i,
            escape(&r.predicted),
            escape(&r.gold),
            verdict
        ));
        for (t, tok) in r.tokens.iter().enumerate() {
            let a = r.alpha.get(t).copied().unwrap_or(0.0);
            let g = r.gates.get(t).copied().unwrap_or(0);
            let opacity = if max_alpha > 0.0 { a / max_alpha } else { 0.0 };
            if g == 0 {
                html.push_str(&format!(
                    "<span class=\"tok closed\">{}</span>",
                    escape(tok)
                ));
            } else {
                html.push_str(&format!(
                    "<span class=\"tok\" style=\"background: rgba(255,99,71,{:.3})\" title=\"α={:.4}\">{}</span>",
                    opacity,
                    a,
                    escape(tok)
                ));
            }
        }
        html.push_str("</div></div>\n");
    }
    html.push_str("</body></html>\n");
    std::fs::write(path, html).map_err(|e| GaError::io(path, e))
}

/// One `key=value` metric per line, in the given order.
pub fn write_metrics(mut out: impl Write, pairs: &[(&str, String)]) -> Result<()> {
    for (k, v) in pairs {
        writeln!(out, "{k}={v}").map_err(|e| GaError::io("metrics", e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<AttentionRecord> {
        vec![
            AttentionRecord {
                tokens: vec!["a".into(), "<br".into(), "c".into()],
                gates: vec![1, 0, 1],
                alpha: vec![0.75, 0.0, 0.25],
                p: vec![0.9, 0.2, 0.6],
                predicted: "pos".into(),
                gold: "neg".into(),
            },
            AttentionRecord {
                tokens: vec!["fine".into()],
                gates: vec![1],
                alpha: vec![1.0],
                p: vec![],
                predicted: "pos".into(),
                gold: "pos".into(),
            },
        ]
    }

    #[test]
    fn json_lines_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let records = sample();
        write_json_lines(&path, &records).unwrap();
        let back = read_json_lines(&path).unwrap();
        assert_eq!(back, records);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["tokens", "gates", "alpha", "p", "predicted", "gold"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn malformed_json_line_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"tokens\":[]}\nnot json\n").unwrap();
        match read_json_lines(&path) {
            Err(GaError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn heatmap_strikes_closed_tokens_and_escapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.html");
        write_html_heatmap(&path, &sample()).unwrap();
        let html = std::fs::read_to_string(&path).unwrap();
        assert!(html.contains("class=\"tok closed\">&lt;br</span>"));
        assert!(html.contains("rgba(255,99,71,1.000)"));
        assert!(html.contains("predicted=pos gold=neg (wrong)"));
        assert!(!html.contains("<br"));
    }

    #[test]
    fn metric_lines_are_key_value() {
        let mut buf = Vec::new();
        write_metrics(
            &mut buf,
            &[
                ("accuracy", "0.9000".to_string()),
                ("density", "0.2000".to_string()),
            ],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "accuracy=0.9000\ndensity=0.2000\n"
        );
    }
}
