//! Word-level vocabulary with reserved special tokens.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SEP: u32 = 4;

const SPECIALS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<sep>"];

/// Byte ranges of the tokens `tokenize` would produce: runs of alphanumeric
/// characters, plus every other non-whitespace character as its own token.
pub fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            word_start.get_or_insert(i);
        } else {
            if let Some(start) = word_start.take() {
                spans.push((start, i));
            }
            if !c.is_whitespace() {
                spans.push((i, i + c.len_utf8()));
            }
        }
    }
    if let Some(start) = word_start {
        spans.push((start, text.len()));
    }
    spans
}

/// Splits text into lowercased word-level tokens (see `token_spans`).
pub fn tokenize(text: &str) -> Vec<String> {
    token_spans(text)
        .into_iter()
        .map(|(s, e)| text[s..e].to_lowercase())
        .collect()
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from token frequency: most frequent first, ties
    /// broken lexicographically, truncated to `max_size` ids including the
    /// five specials.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Self> {
        if max_size < SPECIALS.len() + 1 {
            return Err(Error::Config(format!(
                "vocabulary max_size must be at least {}, got {max_size}",
                SPECIALS.len() + 1
            )));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut any = false;
        for text in texts {
            any = true;
            for tok in tokenize(text) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        if !any {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - SPECIALS.len());

        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(ranked.into_iter().map(|(t, _)| t));
        Ok(Self::from_tokens(id_to_token))
    }

    fn from_tokens(id_to_token: Vec<String>) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            id_to_token,
            token_to_id,
        }
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// Tokenizes, maps unknown tokens to UNK, truncates to `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<u32> {
        let mut ids: Vec<u32> = tokenize(text)
            .into_iter()
            .map(|t| self.id(&t).unwrap_or(UNK))
            .collect();
        ids.truncate(max_len);
        ids
    }

    /// Joins the tokens for `ids` with single spaces.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(SPECIALS[UNK as usize]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Writes `token<TAB>id` lines sorted by id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for (id, token) in self.id_to_token.iter().enumerate() {
            writeln!(out, "{token}\t{id}").expect("write to Vec");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rows: Vec<(String, u32)> = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let (token, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, format!("line {}: missing tab", lineno + 1)))?;
            let id: u32 = id
                .parse()
                .map_err(|_| Error::parse(path, format!("line {}: bad id {id:?}", lineno + 1)))?;
            rows.push((token.to_string(), id));
        }
        rows.sort_by_key(|(_, id)| *id);
        for (expect, (token, id)) in rows.iter().enumerate() {
            if *id as usize != expect {
                return Err(Error::parse(
                    path,
                    format!("ids not contiguous: expected {expect}, found {id} ({token})"),
                ));
            }
        }
        if rows.len() < SPECIALS.len() {
            return Err(Error::parse(path, "missing special tokens"));
        }
        for (i, want) in SPECIALS.iter().enumerate() {
            if rows[i].0 != *want {
                return Err(Error::parse(
                    path,
                    format!("special id {i} must be {want:?}, found {:?}", rows[i].0),
                ));
            }
        }
        let tokens: Vec<String> = rows.into_iter().map(|(t, _)| t).collect();
        let vocab = Self::from_tokens(tokens);
        if vocab.token_to_id.len() != vocab.id_to_token.len() {
            return Err(Error::parse(path, "duplicate tokens"));
        }
        Ok(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_splits_punctuation() {
        assert_eq!(tokenize("The cat's hat."), vec!["the", "cat", "'", "s", "hat", "."]);
        assert_eq!(tokenize(""), Vec::<String>::new());
        assert_eq!(tokenize("  a  b "), vec!["a", "b"]);
    }

    #[test]
    fn token_spans_slice_back_to_original_text() {
        let text = "The cat's hat — 2nd éd.";
        let spans = token_spans(text);
        let slices: Vec<&str> = spans.iter().map(|&(s, e)| &text[s..e]).collect();
        assert_eq!(slices, vec!["The", "cat", "'", "s", "hat", "—", "2nd", "éd", "."]);
        let lowered: Vec<String> = slices.iter().map(|t| t.to_lowercase()).collect();
        assert_eq!(lowered, tokenize(text));
    }

    #[test]
    fn build_orders_by_frequency_then_token() {
        let v = Vocabulary::build(["a a b"], 7).unwrap();
        assert_eq!(v.id("a"), Some(5));
        assert_eq!(v.id("b"), Some(6));
        assert_eq!(v.size(), 7);
    }

    #[test]
    fn equal_frequency_breaks_ties_lexicographically() {
        let v = Vocabulary::build(["b a", "a b"], 10).unwrap();
        assert!(v.id("a").unwrap() < v.id("b").unwrap());
    }

    #[test]
    fn empty_corpus_entry_contributes_nothing() {
        let v = Vocabulary::build(["", "x"], 10).unwrap();
        assert_eq!(v.size(), 6);
        assert_eq!(v.id("x"), Some(5));
    }

    #[test]
    fn tiny_max_size_is_a_config_error() {
        assert!(matches!(
            Vocabulary::build(["a"], 5),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(
            Vocabulary::build(std::iter::empty::<&str>(), 10),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn encode_maps_truncates_and_handles_unknowns() {
        let v = Vocabulary::build(["the cat"], 10).unwrap();
        assert_eq!(v.encode("", 512), Vec::<u32>::new());
        assert_eq!(v.encode("the", 512), vec![v.id("the").unwrap()]);
        assert_eq!(v.encode("the dog", 512), vec![v.id("the").unwrap(), UNK]);
        let long = vec!["cat"; 600].join(" ");
        assert_eq!(v.encode(&long, 512).len(), 512);
    }

    #[test]
    fn encode_detokenize_round_trips_normalized_text() {
        let v = Vocabulary::build(["where does he live ?"], 20).unwrap();
        let text = "where does he live ?";
        let ids = v.encode(text, 128);
        assert_eq!(v.detokenize(&ids), text);
    }

    #[test]
    fn vocabulary_file_round_trips_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("v1.tsv");
        let p2 = dir.path().join("v2.tsv");
        let v = Vocabulary::build(["b a a c c c"], 9).unwrap();
        v.save(&p1).unwrap();
        Vocabulary::build(["b a a c c c"], 9).unwrap().save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let loaded = Vocabulary::load(&p1).unwrap();
        assert_eq!(loaded.size(), v.size());
        assert_eq!(loaded.id("c"), v.id("c"));
        let p3 = dir.path().join("v3.tsv");
        loaded.save(&p3).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p3).unwrap());
    }

    #[test]
    fn load_rejects_corrupted_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.tsv");
        std::fs::write(&p, "nothing here").unwrap();
        assert!(matches!(Vocabulary::load(&p), Err(Error::Parse { .. })));
        std::fs::write(&p, "<pad>\t0\n<bos>\t1\n").unwrap();
        assert!(matches!(Vocabulary::load(&p), Err(Error::Parse { .. })));
    }
}
