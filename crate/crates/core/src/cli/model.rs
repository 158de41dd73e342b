//! Versioned JSON model file holding the embedding table, the fitted HMM and
//! the configuration used to produce them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::CliError;
use crate::embedding::EmbeddingTable;
use crate::hmm::HmmParams;

pub const MODEL_FORMAT: &str = "loghmm-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub source_id: String,
    pub config: PipelineConfig,
    pub embedding: EmbeddingTable,
    pub hmm: HmmParams,
}

impl ModelFile {
    pub fn new(
        source_id: impl Into<String>,
        config: PipelineConfig,
        embedding: EmbeddingTable,
        hmm: HmmParams,
    ) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            source_id: source_id.into(),
            config,
            embedding,
            hmm,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let model: Self = serde_json::from_str(text)
            .map_err(|e| CliError::Data(format!("malformed model file: {e}")))?;
        if model.format != MODEL_FORMAT {
            return Err(CliError::Data(format!(
                "unsupported model format {:?}, expected {MODEL_FORMAT:?}",
                model.format
            )));
        }
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<(), CliError> {
        self.hmm
            .validate()
            .map_err(|e| CliError::Data(e.to_string()))?;
        let table = &self.embedding;
        let rows_ok = table.input.len() == table.vocab.len()
            && table.output.len() == table.vocab.len()
            && table
                .input
                .iter()
                .chain(&table.output)
                .all(|r| r.len() == table.dim);
        if !rows_ok {
            return Err(CliError::Data(
                "embedding matrices do not match vocabulary".into(),
            ));
        }
        if table.dim != self.hmm.dim() {
            return Err(CliError::Data(format!(
                "embedding dimension {} does not match HMM dimension {}",
                table.dim,
                self.hmm.dim()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_json()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }
}
