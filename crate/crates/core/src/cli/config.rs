//! Pipeline configuration, loaded from TOML and overridable by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::embedding::EmbedConfig;
use crate::hmm::FitConfig;
use crate::ingest::{default_patterns, TimestampPattern};
use crate::preprocess::StopWordList;
use crate::scorer::ScoreStrategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub timestamp_formats: Vec<TimestampPattern>,
    /// Stop-word file; the built-in list when absent.
    pub stopwords: Option<PathBuf>,
    pub embed: EmbedConfig,
    pub fit: FitConfig,
    pub strategy: ScoreStrategy,
    /// Number of trailing entries held out for scoring.
    pub holdout: usize,
    pub format: OutputFormat,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            timestamp_formats: default_patterns(),
            stopwords: None,
            embed: EmbedConfig::default(),
            fit: FitConfig::default(),
            strategy: ScoreStrategy::FullHistory,
            holdout: 50,
            format: OutputFormat::Csv,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.timestamp_formats.is_empty() {
            return Err(CliError::Config(
                "at least one timestamp format is required".into(),
            ));
        }
        self.embed
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.fit
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.strategy
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn stop_words(&self) -> Result<StopWordList, CliError> {
        match &self.stopwords {
            None => Ok(StopWordList::builtin()),
            Some(path) => StopWordList::from_file(path).map_err(|e| CliError::io(path, e)),
        }
    }

    /// Index of the first held-out entry for a log of `len` entries.
    pub fn split(&self, len: usize) -> usize {
        len.saturating_sub(self.holdout)
    }
}
