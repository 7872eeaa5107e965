use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tokenizer::standardize;

pub const NUM_CLASSES: usize = 6;

/// Coarse labels in class-index order.
pub const CLASS_LABELS: [&str; NUM_CLASSES] = ["ABBR", "DESC", "ENTY", "HUM", "LOC", "NUM"];

pub fn class_index(label: &str) -> Option<usize> {
    CLASS_LABELS.iter().position(|&l| l == label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub text: String,
    pub coarse: usize,
    /// Fine-grained label, kept for round-tripping only.
    pub fine: String,
}

impl Example {
    pub fn coarse_label(&self) -> &'static str {
        CLASS_LABELS[self.coarse]
    }

    /// Inverse of [`parse_trec_line`].
    pub fn render(&self) -> String {
        format!("{}:{} {}", self.coarse_label(), self.fine, self.text)
    }
}

/// Parses `COARSE:fine question text`. `line_no` is reported in errors.
pub fn parse_trec_line(line: &str, line_no: usize) -> Result<Example> {
    let line = line.trim_end_matches(['\r', '\n']);
    let (coarse, rest) = line
        .split_once(':')
        .ok_or_else(|| Error::parse(line_no, "missing ':' after coarse label"))?;
    let coarse_idx = class_index(coarse)
        .ok_or_else(|| Error::parse(line_no, format!("unknown coarse label {coarse:?}")))?;
    let ws = rest
        .find(char::is_whitespace)
        .ok_or_else(|| Error::parse(line_no, "missing question text"))?;
    let fine = &rest[..ws];
    let ws_len = rest[ws..].chars().next().map_or(1, char::len_utf8);
    let text = &rest[ws + ws_len..];
    if fine.is_empty() {
        return Err(Error::parse(line_no, "empty fine label"));
    }
    if standardize(text).is_empty() {
        return Err(Error::parse(line_no, "empty question text"));
    }
    Ok(Example {
        text: text.to_string(),
        coarse: coarse_idx,
        fine: fine.to_string(),
    })
}

/// UTF-8 when valid, otherwise Latin-1 (every byte maps to the code point of the same value).
pub fn decode_line(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_string(),
        Err(_) => bytes.iter().map(|&b| b as char).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub split: Split,
    examples: Vec<Example>,
    histogram: [usize; NUM_CLASSES],
}

impl Dataset {
    pub fn new(split: Split, examples: Vec<Example>) -> Self {
        let mut histogram = [0; NUM_CLASSES];
        for e in &examples {
            histogram[e.coarse] += 1;
        }
        Dataset {
            split,
            examples,
            histogram,
        }
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn histogram(&self) -> &[usize; NUM_CLASSES] {
        &self.histogram
    }

    pub fn subset(&self, n: usize) -> Dataset {
        Dataset::new(self.split, self.examples.iter().take(n).cloned().collect())
    }

    /// A training split must be non-empty and contain every class.
    pub fn check_trainable(&self) -> Result<()> {
        if self.examples.is_empty() {
            return Err(Error::Config("training dataset is empty".into()));
        }
        if let Some(k) = self.histogram.iter().position(|&c| c == 0) {
            return Err(Error::Config(format!(
                "training dataset has no {} examples",
                CLASS_LABELS[k]
            )));
        }
        Ok(())
    }
}

/// Parses a whole file; blank lines are skipped.
pub fn parse_dataset(bytes: &[u8], split: Split) -> Result<Dataset> {
    let mut examples = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = decode_line(raw);
        if line.trim().is_empty() {
            continue;
        }
        examples.push(parse_trec_line(&line, i + 1)?);
    }
    if examples.is_empty() {
        log::warn!("{} dataset is empty", split.as_str());
    }
    Ok(Dataset::new(split, examples))
}

pub fn load_dataset(path: &Path, split: Split) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&bytes, split)
}
