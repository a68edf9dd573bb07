//! Token vocabulary with reserved PAD/UNK ids, built from the training split
//! only. Ids are assigned in first-seen corpus order so builds are
//! deterministic.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{GaError, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Clone, Debug)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocab {
    /// Builds from tokenized examples, keeping tokens seen at least
    /// `min_freq` times, in first-seen order after the reserved entries.
    pub fn build<'a, I>(corpus: I, min_freq: usize) -> Vocab
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut order: Vec<&str> = Vec::new();
        for example in corpus {
            for tok in example {
                let c = counts.entry(tok).or_insert(0);
                if *c == 0 {
                    order.push(tok);
                }
                *c += 1;
            }
        }
        let mut v = Vocab::reserved();
        for tok in order {
            if counts[tok] >= min_freq && !v.token_to_id.contains_key(tok) {
                v.push(tok.to_string());
            }
        }
        v
    }

    /// Rebuilds from an id-ordered token list, as stored in checkpoints.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocab> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD_TOKEN || tokens[UNK_ID] != UNK_TOKEN {
            return Err(GaError::contract(
                "token list must start with the reserved <pad> and <unk> rows",
            ));
        }
        let mut v = Vocab {
            token_to_id: HashMap::new(),
            tokens: Vec::new(),
        };
        for tok in tokens {
            if v.token_to_id.contains_key(&tok) {
                return Err(GaError::contract(format!("duplicate token '{tok}'")));
            }
            v.push(tok);
        }
        Ok(v)
    }

    fn reserved() -> Vocab {
        let mut v = Vocab {
            token_to_id: HashMap::new(),
            tokens: Vec::new(),
        };
        v.push(PAD_TOKEN.to_string());
        v.push(UNK_TOKEN.to_string());
        v
    }

    fn push(&mut self, token: String) {
        self.token_to_id.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        *self.token_to_id.get(token).unwrap_or(&UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| GaError::io(path, e))?;
        for (id, tok) in self.tokens.iter().enumerate() {
            writeln!(f, "{tok}\t{id}").map_err(|e| GaError::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let f = std::fs::File::open(path).map_err(|e| GaError::io(path, e))?;
        let mut v = Vocab {
            token_to_id: HashMap::new(),
            tokens: Vec::new(),
        };
        for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| GaError::io(path, e))?;
            let (tok, id) = line.split_once('\t').ok_or_else(|| GaError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: "expected token<TAB>id".into(),
            })?;
            let id: usize = id.parse().map_err(|_| GaError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("bad id {id:?}"),
            })?;
            if id != v.tokens.len() {
                return Err(GaError::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("id {id} out of order, expected {}", v.tokens.len()),
                });
            }
            v.push(tok.to_string());
        }
        if v.len() < 2 || v.tokens[PAD_ID] != PAD_TOKEN || v.tokens[UNK_ID] != UNK_TOKEN {
            return Err(GaError::Parse {
                path: path.display().to_string(),
                line: 1,
                msg: "vocab file missing reserved <pad>/<unk> rows".into(),
            });
        }
        Ok(v)
    }
}
