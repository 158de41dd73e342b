//! Splitting raw log text into ordered entries.
//!
//! A line starts a new entry when its prefix parses under one of the
//! configured timestamp patterns. Lines that do not carry a timestamp are
//! continuation lines and are appended to the entry before them.

use chrono::format::{parse_and_remainder, Parsed, StrftimeItems};
use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

/// ISO-8601 style `2023-05-01 12:00:00`.
pub const ISO_PATTERN: &str = "%Y-%m-%d %H:%M:%S";
/// Syslog style `May  1 12:00:00`. The year is absent in this format.
pub const SYSLOG_PATTERN: &str = "%b %e %H:%M:%S";

/// Year assigned to timestamps whose pattern carries no year field.
const DEFAULT_YEAR: i32 = 1970;

/// Raw content of one log source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawLogText {
    pub source_id: String,
    pub content: String,
}

impl RawLogText {
    pub fn new(source_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            source_id: source_id.into(),
            content: content.into(),
        }
    }

    /// Decodes bytes as UTF-8, substituting the replacement character for
    /// invalid sequences.
    pub fn from_bytes(source_id: impl Into<String>, bytes: &[u8]) -> Self {
        Self::new(source_id, String::from_utf8_lossy(bytes).into_owned())
    }
}

/// A strptime-style format describing a datetime at the start of a line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimestampPattern(String);

impl TimestampPattern {
    pub fn new(format: impl Into<String>) -> Self {
        Self(format.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Parses a timestamp at the start of `line` and returns it together
    /// with the rest of the line.
    pub fn parse_prefix<'a>(&self, line: &'a str) -> Option<(NaiveDateTime, &'a str)> {
        let mut parsed = Parsed::new();
        let rest = parse_and_remainder(&mut parsed, line, StrftimeItems::new(&self.0)).ok()?;
        if parsed.year().is_none() && parsed.year_div_100().is_none() && parsed.isoyear().is_none()
        {
            parsed.set_year(DEFAULT_YEAR as i64).ok()?;
        }
        let ts = parsed.to_naive_datetime_with_offset(0).ok()?;
        Some((ts, rest))
    }
}

/// The default pattern list: ISO-8601 then syslog.
pub fn default_patterns() -> Vec<TimestampPattern> {
    vec![
        TimestampPattern::new(ISO_PATTERN),
        TimestampPattern::new(SYSLOG_PATTERN),
    ]
}

/// One extracted log message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub source_id: String,
    pub index: usize,
    pub timestamp: Option<NaiveDateTime>,
    pub text: String,
}

/// Splits `raw` into entries at lines that begin with a timestamp.
///
/// Continuation lines are trimmed and joined to the previous entry with a
/// single space. Lines before the first timestamp form one entry without a
/// timestamp. Blank lines are dropped.
pub fn split_entries(raw: &RawLogText, patterns: &[TimestampPattern]) -> Vec<LogEntry> {
    let mut entries: Vec<LogEntry> = Vec::new();
    for line in raw.content.lines() {
        let stamped = patterns.iter().find_map(|p| p.parse_prefix(line));
        match stamped {
            Some((ts, rest)) => entries.push(LogEntry {
                source_id: raw.source_id.clone(),
                index: entries.len(),
                timestamp: Some(ts),
                text: rest.trim().to_string(),
            }),
            None => {
                let body = line.trim();
                if body.is_empty() {
                    continue;
                }
                match entries.last_mut() {
                    Some(last) => {
                        if !last.text.is_empty() {
                            last.text.push(' ');
                        }
                        last.text.push_str(body);
                    }
                    None => entries.push(LogEntry {
                        source_id: raw.source_id.clone(),
                        index: 0,
                        timestamp: None,
                        text: body.to_string(),
                    }),
                }
            }
        }
    }
    entries
}
