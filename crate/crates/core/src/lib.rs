//! Unsupervised anomaly detection for log streams.
//!
//! Log text is split into entries ([`ingest`]), normalized into tokens
//! ([`preprocess`]), embedded as the mean of CBOW token vectors
//! ([`embedding`]) and scored by the negative incremental log-likelihood
//! under a Gaussian-emission hidden Markov model ([`hmm`], [`scorer`]).

pub mod cli;
pub mod embedding;
pub mod hmm;
pub mod ingest;
pub mod preprocess;
pub mod scorer;
pub mod synth;

pub use embedding::{EmbedConfig, EmbeddingTable, EntryVector, Vocabulary};
pub use hmm::{FitConfig, FitResult, ForwardState, HmmParams};
pub use ingest::{LogEntry, RawLogText, TimestampPattern};
pub use preprocess::{StopWordList, TokenSequence};
pub use scorer::{ScoreSeries, ScoreStrategy, ScoredEntry};
