//! Dataset readers (label-TAB-text and TREC-native lines) and the persisted
//! label mapping that keeps class ids stable between training and evaluation.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::data::tokenize::tokenize;
use crate::error::{GaError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawExample {
    pub label: String,
    pub tokens: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    TsvLabelText,
    TrecNative,
}

impl std::fmt::Display for DataFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DataFormat::TsvLabelText => "tsv_label_text",
            DataFormat::TrecNative => "trec_native",
        })
    }
}

impl std::str::FromStr for DataFormat {
    type Err = GaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv_label_text" => Ok(DataFormat::TsvLabelText),
            "trec_native" => Ok(DataFormat::TrecNative),
            other => Err(GaError::Config(format!(
                "data format must be tsv_label_text or trec_native, got {other:?}"
            ))),
        }
    }
}

pub fn read_dataset(path: &Path, format: DataFormat) -> Result<Vec<RawExample>> {
    let f = std::fs::File::open(path).map_err(|e| GaError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| GaError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let (label, text) = match format {
            DataFormat::TsvLabelText => {
                let (label, text) = line.split_once('\t').ok_or_else(|| GaError::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: "expected label<TAB>text".into(),
                })?;
                (label.to_string(), text)
            }
            DataFormat::TrecNative => {
                let (head, text) = line.split_once(' ').ok_or_else(|| GaError::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: "expected LABEL:sub text".into(),
                })?;
                let (coarse, _) = head.split_once(':').ok_or_else(|| GaError::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("label {head:?} has no ':' separator"),
                })?;
                (coarse.to_string(), text)
            }
        };
        out.push(RawExample {
            label,
            tokens: tokenize(text),
        });
    }
    Ok(out)
}

/// Dense class-id mapping in first-seen order, persisted as label<TAB>id.
#[derive(Clone, Debug, Default)]
pub struct LabelMap {
    name_to_id: HashMap<String, usize>,
    names: Vec<String>,
}

impl LabelMap {
    pub fn build(examples: &[RawExample]) -> LabelMap {
        let mut m = LabelMap::default();
        for ex in examples {
            m.intern(&ex.label);
        }
        m
    }

    fn intern(&mut self, label: &str) -> usize {
        if let Some(&id) = self.name_to_id.get(label) {
            return id;
        }
        let id = self.names.len();
        self.name_to_id.insert(label.to_string(), id);
        self.names.push(label.to_string());
        id
    }

    pub fn id(&self, label: &str) -> Result<usize> {
        self.name_to_id.get(label).copied().ok_or_else(|| {
            GaError::contract(format!("label {label:?} not in the persisted mapping"))
        })
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn from_names(names: Vec<String>) -> LabelMap {
        let mut m = LabelMap::default();
        for n in names {
            m.intern(&n);
        }
        m
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| GaError::io(path, e))?;
        for (id, name) in self.names.iter().enumerate() {
            writeln!(f, "{name}\t{id}").map_err(|e| GaError::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<LabelMap> {
        let f = std::fs::File::open(path).map_err(|e| GaError::io(path, e))?;
        let mut m = LabelMap::default();
        for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| GaError::io(path, e))?;
            let (name, id) = line.split_once('\t').ok_or_else(|| GaError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: "expected label<TAB>id".into(),
            })?;
            let id: usize = id.parse().map_err(|_| GaError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("bad id {id:?}"),
            })?;
            if id != m.names.len() {
                return Err(GaError::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("id {id} out of order"),
                });
            }
            m.intern(name);
        }
        Ok(m)
    }
}

/// Token ids plus a dense class id; the unit the batcher consumes.
#[derive(Clone, Debug)]
pub struct EncodedExample {
    pub ids: Vec<usize>,
    pub label: usize,
}

pub fn encode_examples(
    raw: &[RawExample],
    vocab: &crate::data::vocab::Vocab,
    labels: &LabelMap,
) -> Result<Vec<EncodedExample>> {
    raw.iter()
        .map(|ex| {
            Ok(EncodedExample {
                ids: vocab.encode(&ex.tokens),
                label: labels.id(&ex.label)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_file(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, content).unwrap();
        p
    }

    #[test]
    fn tsv_lines_parse() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "d.tsv", "2\tgreat movie\n0\tterrible stuff\n");
        let ds = read_dataset(&p, DataFormat::TsvLabelText).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds[0].label, "2");
        assert_eq!(ds[0].tokens, vec!["great", "movie"]);
    }

    #[test]
    fn trec_native_extracts_coarse_label() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(
            dir.path(),
            "trec.txt",
            "LOC:city What city hosted the games ?\nDESC:manner How did it end ?\n",
        );
        let ds = read_dataset(&p, DataFormat::TrecNative).unwrap();
        assert_eq!(ds[0].label, "LOC");
        assert_eq!(ds[0].tokens[0], "what");
        assert_eq!(ds[1].label, "DESC");
    }

    #[test]
    fn malformed_line_reports_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "bad.tsv", "0\tfine\nno tab here\n");
        match read_dataset(&p, DataFormat::TsvLabelText).unwrap_err() {
            GaError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_file_gives_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "empty.tsv", "");
        assert!(read_dataset(&p, DataFormat::TsvLabelText).unwrap().is_empty());
    }

    #[test]
    fn label_map_round_trip_and_unknown_label() {
        let raw = vec![
            RawExample { label: "LOC".into(), tokens: vec![] },
            RawExample { label: "DESC".into(), tokens: vec![] },
            RawExample { label: "LOC".into(), tokens: vec![] },
        ];
        let m = LabelMap::build(&raw);
        assert_eq!(m.len(), 2);
        assert_eq!(m.id("LOC").unwrap(), 0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.tsv");
        m.save(&p).unwrap();
        let m2 = LabelMap::load(&p).unwrap();
        assert_eq!(m2.id("DESC").unwrap(), 1);
        assert!(m2.id("HUM").is_err());
    }
}
