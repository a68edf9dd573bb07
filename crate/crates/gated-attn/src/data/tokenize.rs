//! Whitespace tokenizer with boundary punctuation split off as standalone
//! tokens. Interior punctuation (hyphens, apostrophes, stray markup like
//! "film.<br") stays attached; corpora that pre-separate contractions keep
//! them as written.

const PUNCT: &[char] = &['.', ',', '!', '?', ';', ':', '"', '(', ')', '[', ']', '{', '}'];

pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        split_chunk(&lower, &mut out);
    }
    out
}

fn split_chunk(chunk: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = chunk.chars().collect();
    let mut lo = 0;
    let mut hi = chars.len();
    let mut leading = Vec::new();
    while lo < hi && PUNCT.contains(&chars[lo]) {
        leading.push(chars[lo].to_string());
        lo += 1;
    }
    let mut trailing = Vec::new();
    while hi > lo && PUNCT.contains(&chars[hi - 1]) {
        trailing.push(chars[hi - 1].to_string());
        hi -= 1;
    }
    out.extend(leading);
    if lo < hi {
        out.push(chars[lo..hi].iter().collect());
    }
    out.extend(trailing.into_iter().rev());
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn contraction_stays_separate_token() {
        assert_eq!(toks("It 's good."), vec!["it", "'s", "good", "."]);
    }

    #[test]
    fn empty_text() {
        assert_eq!(toks(""), Vec::<String>::new());
        assert_eq!(toks("   \t\n"), Vec::<String>::new());
    }

    #[test]
    fn lowercase_idempotent() {
        assert_eq!(toks("A a A"), vec!["a", "a", "a"]);
    }

    #[test]
    fn boundary_punctuation_splits_in_order() {
        assert_eq!(toks("(hello)!"), vec!["(", "hello", ")", "!"]);
        assert_eq!(toks("\"why?\""), vec!["\"", "why", "?", "\""]);
        assert_eq!(toks("!!!"), vec!["!", "!", "!"]);
    }

    #[test]
    fn interior_punctuation_kept() {
        assert_eq!(toks("film.<br"), vec!["film.<br"]);
        assert_eq!(toks("well-known it's"), vec!["well-known", "it's"]);
    }
}
