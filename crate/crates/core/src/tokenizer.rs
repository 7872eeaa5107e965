//! Text standardization, word-level tokenization, vocabularies and
//! fixed-length id encoding.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const MASK: usize = 2;
pub const RESERVED: [&str; 3] = ["[PAD]", "[UNK]", "[MASK]"];

/// Lowercases, trims, and collapses internal whitespace runs to one space.
pub fn standardize(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Splits on whitespace; every character that is neither alphanumeric nor
/// whitespace becomes a token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            tokens.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// `standardize` followed by `tokenize`.
pub fn preprocess(text: &str) -> Vec<String> {
    tokenize(&standardize(text))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    to_id: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::reserved_only()
    }
}

impl Vocab {
    pub fn reserved_only() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let to_id = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { to_id, tokens }
    }

    /// Appends tokens after the reserved ids; duplicates of existing tokens are ignored.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self::reserved_only();
        for t in tokens {
            v.push(t.into());
        }
        v
    }

    fn push(&mut self, token: String) {
        if !self.to_id.contains_key(&token) {
            self.to_id.insert(token.clone(), self.tokens.len());
            self.tokens.push(token);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Plain text, one token per line; line index equals id, so the first three
    /// lines are the reserved header.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        for (i, expected) in RESERVED.iter().enumerate() {
            match lines.get(i) {
                Some(l) if l == expected => {}
                other => {
                    return Err(Error::parse(
                        i + 1,
                        format!("expected reserved token {expected}, found {other:?}"),
                    ))
                }
            }
        }
        let mut v = Self::reserved_only();
        for (i, l) in lines.iter().enumerate().skip(RESERVED.len()) {
            if l.is_empty() || v.to_id.contains_key(*l) {
                return Err(Error::parse(
                    i + 1,
                    format!("empty or duplicate token {l:?}"),
                ));
            }
            v.push(l.to_string());
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Keeps tokens seen at least `min_freq` times, ordered by frequency (desc) then
/// token (asc), truncated so the vocabulary holds at most `max_size` ids.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], min_freq: usize, max_size: usize) -> Vocab {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for sentence in corpus {
        for t in sentence {
            *counts.entry(t.as_ref()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_freq.max(1))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size.saturating_sub(RESERVED.len()));
    Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

/// Ids padded or truncated to a fixed length.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    ids: Vec<usize>,
    true_length: usize,
}

impl TokenSeq {
    pub fn new(ids: Vec<usize>, true_length: usize) -> Result<Self> {
        if true_length > ids.len() {
            return Err(Error::Usage(format!(
                "true length {true_length} exceeds {}",
                ids.len()
            )));
        }
        if ids[..true_length].contains(&PAD) || ids[true_length..].iter().any(|&i| i != PAD) {
            return Err(Error::Usage("padding must fill exactly the tail".into()));
        }
        Ok(TokenSeq { ids, true_length })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// The non-padding prefix.
    pub fn tokens(&self) -> &[usize] {
        &self.ids[..self.true_length]
    }

    pub fn true_length(&self) -> usize {
        self.true_length
    }

    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    pub fn decode<'v>(&self, vocab: &'v Vocab) -> Vec<&'v str> {
        self.tokens()
            .iter()
            .map(|&i| vocab.token(i).unwrap_or(RESERVED[UNK]))
            .collect()
    }
}

/// Maps tokens to ids (unknown tokens to UNK), keeps the first `max_len`, pads the tail.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocab, max_len: usize) -> TokenSeq {
    let max_len = max_len.max(1);
    let true_length = tokens.len().min(max_len);
    let mut ids: Vec<usize> = tokens[..true_length]
        .iter()
        .map(|t| vocab.id(t.as_ref()))
        .collect();
    ids.resize(max_len, PAD);
    TokenSeq { ids, true_length }
}
