//! Per-entry anomaly scores.
//!
//! The score of entry `i` is its negative conditional log-likelihood given
//! every entry before it:
//!
//! ```text
//! s_i = log p(o_1..o_{i-1}) - log p(o_1..o_i) = -log p(o_i | o_1..o_{i-1})
//! ```
//!
//! Larger scores are more anomalous. Scores can be negative because
//! continuous densities may exceed one.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EntryVector;
use crate::hmm::{fit_baum_welch, forward_state, FitConfig, ForwardState, HmmError, HmmParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("split {split} out of range for {len} entries")]
    SplitOutOfRange { split: usize, len: usize },
    #[error("sequence of {len} entries is too short, need at least {required}")]
    TooShort { len: usize, required: usize },
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error(transparent)]
    Hmm(#[from] HmmError),
}

/// How model parameters are estimated while scoring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreStrategy {
    /// One fit on all training entries.
    #[default]
    FullHistory,
    /// Before each scored entry, a fresh fit on the `window` entries
    /// preceding it.
    SlidingWindow { window: usize },
    /// Every `refit_period` scored entries, refit on everything seen so far
    /// starting EM from the current parameters, capped at `iterations`.
    WarmStart {
        refit_period: usize,
        iterations: usize,
    },
}

impl ScoreStrategy {
    pub fn warm_start() -> Self {
        Self::WarmStart {
            refit_period: 1,
            iterations: 5,
        }
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        match *self {
            Self::SlidingWindow { window } if window < 2 => Err(ScoreError::InvalidStrategy(
                format!("window must be at least 2, got {window}"),
            )),
            Self::WarmStart {
                refit_period,
                iterations,
            } if refit_period == 0 || iterations == 0 => Err(ScoreError::InvalidStrategy(
                "refit period and iterations must be positive".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    pub index: usize,
    pub score: f64,
    /// `log p(o_1..o_i)` under the parameters used for this entry.
    pub cumulative_loglik: f64,
    /// Index into `ScoreSeries::models` of the parameters used.
    pub model: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub source_id: String,
    pub entries: Vec<ScoredEntry>,
    pub strategy: ScoreStrategy,
    /// First scored index; entries before it are training-only.
    pub split: usize,
    pub models: Vec<HmmParams>,
}

impl ScoreSeries {
    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    pub fn with_source(mut self, source_id: impl Into<String>) -> Self {
        self.source_id = source_id.into();
        self
    }
}

/// Scores one observation against the history summarized in `state`.
pub fn score_entry(
    mut state: ForwardState,
    params: &HmmParams,
    obs: &EntryVector,
    index: usize,
) -> Result<(ScoredEntry, ForwardState), HmmError> {
    let conditional = state.extend(params, obs)?;
    let entry = ScoredEntry {
        index,
        score: -conditional,
        cumulative_loglik: state.log_likelihood(),
        model: 0,
    };
    Ok((entry, state))
}

fn check_split(entries: &[EntryVector], split: usize) -> Result<(), ScoreError> {
    if split < 2 || split >= entries.len() {
        return Err(ScoreError::SplitOutOfRange {
            split,
            len: entries.len(),
        });
    }
    Ok(())
}

/// Scores `entries[split..]` under fixed parameters, conditioning on the
/// whole prefix.
pub fn score_with_params(
    entries: &[EntryVector],
    split: usize,
    params: &HmmParams,
) -> Result<ScoreSeries, ScoreError> {
    check_split(entries, split)?;
    let mut state = forward_state(params, &entries[..split])?;
    let mut scored = Vec::with_capacity(entries.len() - split);
    for (i, o) in entries.iter().enumerate().skip(split) {
        let (e, next) = score_entry(state, params, o, i)?;
        scored.push(e);
        state = next;
    }
    Ok(ScoreSeries {
        source_id: String::new(),
        entries: scored,
        strategy: ScoreStrategy::FullHistory,
        split,
        models: vec![params.clone()],
    })
}

/// Scores every entry, including the first, under fixed parameters.
pub fn score_all(entries: &[EntryVector], params: &HmmParams) -> Result<ScoreSeries, ScoreError> {
    let mut streamer = Streamer::new(entries, params.clone(), 0)?;
    for i in 0..entries.len() {
        streamer.score(i)?;
    }
    Ok(streamer.finish(ScoreStrategy::FullHistory, 0))
}

/// Tracks the parameters in force and a forward filter positioned just
/// before the next entry to score.
struct Streamer<'a> {
    entries: &'a [EntryVector],
    models: Vec<HmmParams>,
    state: ForwardState,
    out: Vec<ScoredEntry>,
}

impl<'a> Streamer<'a> {
    fn new(
        entries: &'a [EntryVector],
        params: HmmParams,
        position: usize,
    ) -> Result<Self, HmmError> {
        let state = forward_state(&params, &entries[..position])?;
        Ok(Self {
            entries,
            models: vec![params],
            state,
            out: Vec::new(),
        })
    }

    fn current(&self) -> &HmmParams {
        self.models.last().expect("at least one model")
    }

    /// Installs new parameters and replays the history before `position`.
    fn replace(&mut self, params: HmmParams, position: usize) -> Result<(), HmmError> {
        self.state = forward_state(&params, &self.entries[..position])?;
        self.models.push(params);
        Ok(())
    }

    fn score(&mut self, index: usize) -> Result<(), HmmError> {
        let model = self.models.len() - 1;
        let params = self.models.last().expect("at least one model");
        let state = std::mem::replace(&mut self.state, ForwardState::new(params));
        let (mut e, next) = score_entry(state, params, &self.entries[index], index)?;
        e.model = model;
        self.out.push(e);
        self.state = next;
        Ok(())
    }

    fn finish(self, strategy: ScoreStrategy, split: usize) -> ScoreSeries {
        ScoreSeries {
            source_id: String::new(),
            entries: self.out,
            strategy,
            split,
            models: self.models,
        }
    }
}

fn warm_cfg(fit_cfg: &FitConfig, params: &HmmParams, iterations: usize) -> FitConfig {
    FitConfig {
        init: Some(params.clone()),
        max_iter: iterations,
        ..fit_cfg.clone()
    }
}

/// Fits on the training prefix `entries[..split]` (or windows of it) and
/// scores every entry from `split` on.
pub fn score_sequence(
    entries: &[EntryVector],
    split: usize,
    strategy: ScoreStrategy,
    fit_cfg: &FitConfig,
) -> Result<ScoreSeries, ScoreError> {
    check_split(entries, split)?;
    strategy.validate()?;
    match strategy {
        ScoreStrategy::FullHistory => {
            let fit = fit_baum_welch(&entries[..split], fit_cfg)?;
            score_with_params(entries, split, &fit.params)
        }
        ScoreStrategy::SlidingWindow { window } => {
            let mut streamer: Option<Streamer> = None;
            for i in split..entries.len() {
                let fit = fit_baum_welch(&entries[i.saturating_sub(window)..i], fit_cfg)?;
                match streamer.as_mut() {
                    None => streamer = Some(Streamer::new(entries, fit.params, i)?),
                    Some(s) => s.replace(fit.params, i)?,
                }
                streamer.as_mut().expect("initialized").score(i)?;
            }
            Ok(streamer
                .expect("non-empty test segment")
                .finish(strategy, split))
        }
        ScoreStrategy::WarmStart {
            refit_period,
            iterations,
        } => {
            let fit = fit_baum_welch(&entries[..split], fit_cfg)?;
            let mut streamer = Streamer::new(entries, fit.params, split)?;
            for (k, i) in (split..entries.len()).enumerate() {
                if k > 0 && k % refit_period == 0 {
                    let cfg = warm_cfg(fit_cfg, streamer.current(), iterations);
                    let fit = fit_baum_welch(&entries[..i], &cfg)?;
                    streamer.replace(fit.params, i)?;
                }
                streamer.score(i)?;
            }
            Ok(streamer.finish(strategy, split))
        }
    }
}

/// Scores every entry with parameters estimated from data that includes
/// the scored entries themselves.
///
/// `FullHistory` fits once on all entries. `SlidingWindow` fits, for each
/// entry, on a window of `window` entries that contains it. `WarmStart`
/// begins from the all-entries fit and refines it every `refit_period`
/// entries.
pub fn score_with_contaminated_training(
    entries: &[EntryVector],
    strategy: ScoreStrategy,
    fit_cfg: &FitConfig,
) -> Result<ScoreSeries, ScoreError> {
    let len = entries.len();
    if len < 3 {
        return Err(ScoreError::TooShort { len, required: 3 });
    }
    strategy.validate()?;
    match strategy {
        ScoreStrategy::FullHistory => {
            let fit = fit_baum_welch(entries, fit_cfg)?;
            score_all(entries, &fit.params)
        }
        ScoreStrategy::SlidingWindow { window } => {
            let width = window.min(len);
            let mut streamer: Option<Streamer> = None;
            for i in 0..len {
                let start = (i + 1).saturating_sub(width).min(len - width);
                let fit = fit_baum_welch(&entries[start..start + width], fit_cfg)?;
                match streamer.as_mut() {
                    None => streamer = Some(Streamer::new(entries, fit.params, i)?),
                    Some(s) => s.replace(fit.params, i)?,
                }
                streamer.as_mut().expect("initialized").score(i)?;
            }
            Ok(streamer.expect("non-empty sequence").finish(strategy, 0))
        }
        ScoreStrategy::WarmStart {
            refit_period,
            iterations,
        } => {
            let fit = fit_baum_welch(entries, fit_cfg)?;
            let mut streamer = Streamer::new(entries, fit.params, 0)?;
            for i in 0..len {
                if i > 0 && i % refit_period == 0 {
                    let cfg = warm_cfg(fit_cfg, streamer.current(), iterations);
                    let fit = fit_baum_welch(entries, &cfg)?;
                    streamer.replace(fit.params, i)?;
                }
                streamer.score(i)?;
            }
            Ok(streamer.finish(strategy, 0))
        }
    }
}
