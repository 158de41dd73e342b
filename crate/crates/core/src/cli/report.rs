//! Score reports: CSV or JSON rows of index, timestamp, normalized text and
//! score, plus an optional bare `index,score` series for plotting.

use std::io::Write;

use serde::Serialize;

use super::config::OutputFormat;
use crate::ingest::LogEntry;
use crate::preprocess::TokenSequence;
use crate::scorer::{ScoreSeries, ScoreStrategy};

pub const CSV_HEADER: [&str; 4] = ["index", "timestamp", "normalized_text", "score"];

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub index: usize,
    pub timestamp: String,
    pub normalized_text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub source_id: String,
    pub strategy: ScoreStrategy,
    pub split: usize,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn build(series: &ScoreSeries, entries: &[LogEntry], tokens: &[TokenSequence]) -> Self {
        let rows = series
            .entries
            .iter()
            .map(|s| ReportRow {
                index: s.index,
                timestamp: entries[s.index]
                    .timestamp
                    .map(|t| t.format(TIMESTAMP_FORMAT).to_string())
                    .unwrap_or_default(),
                normalized_text: tokens[s.index].to_string(),
                score: s.score,
            })
            .collect();
        Self {
            source_id: series.source_id.clone(),
            strategy: series.strategy,
            split: series.split,
            rows,
        }
    }

    pub fn write<W: Write>(&self, format: OutputFormat, out: W) -> std::io::Result<()> {
        match format {
            OutputFormat::Csv => self.write_csv(out),
            OutputFormat::Json => self.write_json(out),
        }
    }

    fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.index.to_string(),
                r.timestamp.clone(),
                r.normalized_text.clone(),
                r.score.to_string(),
            ])?;
        }
        w.flush()
    }

    fn write_json<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")
    }

    /// Plot-ready `index,score` pairs.
    pub fn write_series<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "score"])?;
        for r in &self.rows {
            w.write_record([r.index.to_string(), r.score.to_string()])?;
        }
        w.flush()
    }
}
