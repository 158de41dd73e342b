//! Token normalization for log messages.
//!
//! Every entry goes through the same pipeline: split on non-word characters,
//! strip special characters, mask host names and numbers with placeholders,
//! lowercase, and drop English stop words.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ingest::LogEntry;

pub const NONZERO: &str = "$nz";
pub const ZERO: &str = "$zero";
pub const HOST: &str = "$host";
pub const UNKNOWN: &str = "$unk";

const PLACEHOLDERS: [&str; 4] = [NONZERO, ZERO, HOST, UNKNOWN];

const BUILTIN_STOP_WORDS: &str = include_str!("../resources/stopwords.txt");

fn is_token_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '/'
}

fn is_placeholder(token: &str) -> bool {
    PLACEHOLDERS.contains(&token)
}

/// Placeholder literal starting at the beginning of `s`, if it is followed by
/// a token boundary.
fn placeholder_prefix(s: &str) -> Option<&'static str> {
    PLACEHOLDERS
        .iter()
        .copied()
        .find(|p| s.starts_with(p) && !s[p.len()..].chars().next().is_some_and(is_token_char))
}

/// Normalized tokens of one log entry.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join(" "))
    }
}

/// Lowercase words removed after normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopWordList {
    words: HashSet<String>,
}

impl StopWordList {
    /// The list shipped in `resources/stopwords.txt`.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_STOP_WORDS)
    }

    /// One word per line; blank lines are ignored.
    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect();
        Self { words }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl Default for StopWordList {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Splits `text` at every run of characters outside `[A-Za-z0-9/]`.
///
/// Placeholder literals such as `$nz` are kept whole so that normalized text
/// tokenizes back to itself.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut skip_until = 0;
    for (i, c) in text.char_indices() {
        if i < skip_until {
            continue;
        }
        if is_token_char(c) {
            current.push(c);
            continue;
        }
        if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
        if c == '$' {
            if let Some(p) = placeholder_prefix(&text[i..]) {
                tokens.push(p.to_string());
                skip_until = i + p.len();
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Normalizes one token. Returns an empty string when nothing survives
/// special-character removal.
pub fn normalize_token(token: &str) -> String {
    if is_placeholder(token) {
        return token.to_string();
    }
    let stripped: String = token.chars().filter(|&c| is_token_char(c)).collect();
    if stripped.is_empty() {
        return String::new();
    }
    let lower = stripped.to_ascii_lowercase();
    if lower.starts_with("xfel") || lower.ends_with("svr") || lower.ends_with("server") {
        return HOST.to_string();
    }
    if lower.bytes().all(|b| b.is_ascii_digit()) {
        let zero = lower.bytes().all(|b| b == b'0');
        return if zero { ZERO } else { NONZERO }.to_string();
    }
    lower
}

/// Full normalization of raw message text.
pub fn preprocess_text(text: &str, stops: &StopWordList) -> TokenSequence {
    let tokens = tokenize(text)
        .iter()
        .map(|t| normalize_token(t))
        .filter(|t| !t.is_empty() && !stops.contains(t))
        .collect();
    TokenSequence(tokens)
}

pub fn preprocess_entry(entry: &LogEntry, stops: &StopWordList) -> TokenSequence {
    preprocess_text(&entry.text, stops)
}
