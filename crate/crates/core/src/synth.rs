//! Synthetic sequences and brute-force reference computations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EntryVector;
use crate::hmm::{fit_baum_welch, FitConfig, HmmParams};
use crate::scorer::{
    score_all, score_with_contaminated_training, ScoreError, ScoreSeries, ScoreStrategy,
};

/// Largest number of state paths the brute-force oracle will enumerate.
pub const MAX_PATHS: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("{n_states}^{len} state paths exceed the enumeration limit")]
    TooLarge { n_states: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Alternating `o1, o2`.
    Regular,
    /// Alternating with the last two entries exchanged.
    Swapped,
    /// Alternating with the last entry replaced by the novel event `oa`.
    NovelEvent,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Regular, Variant::Swapped, Variant::NovelEvent];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Regular => "regular",
            Variant::Swapped => "swapped",
            Variant::NovelEvent => "novel_event",
        }
    }
}

/// The two-symbol toy sequence with an optional disruption at the end.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimalScenario {
    pub variant: Variant,
    pub length: usize,
    pub o1: Vec<f64>,
    pub o2: Vec<f64>,
    pub oa: Vec<f64>,
}

impl MinimalScenario {
    pub const DEFAULT_DIM: usize = 16;

    /// Symbols are unit basis vectors `e0`, `e1` and the novel event
    /// `0.7 * (e0 + e1)`.
    pub fn new(variant: Variant) -> Self {
        let dim = Self::DEFAULT_DIM;
        let unit = |k: usize| {
            let mut v = vec![0.0; dim];
            v[k] = 1.0;
            v
        };
        let mut oa = vec![0.0; dim];
        oa[0] = 0.7;
        oa[1] = 0.7;
        Self {
            variant,
            length: 8,
            o1: unit(0),
            o2: unit(1),
            oa,
        }
    }
}

pub fn gen_minimal(scenario: &MinimalScenario) -> Vec<EntryVector> {
    let t = scenario.length;
    assert!(t >= 4, "minimal scenario needs at least 4 entries");
    let mut seq: Vec<EntryVector> = (0..t)
        .map(|i| {
            let v = if i % 2 == 0 {
                &scenario.o1
            } else {
                &scenario.o2
            };
            EntryVector(v.clone())
        })
        .collect();
    match scenario.variant {
        Variant::Regular => {}
        Variant::Swapped => seq.swap(t - 2, t - 1),
        Variant::NovelEvent => seq[t - 1] = EntryVector(scenario.oa.clone()),
    }
    seq
}

/// Scores every position of a minimal scenario.
///
/// With `contaminated == false` the model is fit on all but the last entry;
/// otherwise on the whole sequence.
pub fn score_minimal(
    scenario: &MinimalScenario,
    contaminated: bool,
    fit_cfg: &FitConfig,
) -> Result<ScoreSeries, ScoreError> {
    let seq = gen_minimal(scenario);
    if contaminated {
        return score_with_contaminated_training(&seq, ScoreStrategy::FullHistory, fit_cfg);
    }
    let fit = fit_baum_welch(&seq[..seq.len() - 1], fit_cfg)?;
    let mut series = score_all(&seq, &fit.params)?;
    series.split = seq.len() - 1;
    Ok(series)
}

fn gaussian_density_log(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((x, m), v)| {
            let density =
                (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
            density.ln()
        })
        .sum()
}

/// Exact `log p(obs)` by summing over every state path.
pub fn brute_force_loglik(params: &HmmParams, obs: &[EntryVector]) -> Result<f64, SynthError> {
    let n = params.n_states();
    let len = obs.len();
    let paths = (n as u64)
        .checked_pow(len as u32)
        .filter(|&p| p <= MAX_PATHS);
    let Some(paths) = paths else {
        return Err(SynthError::TooLarge { n_states: n, len });
    };
    let emission: Vec<Vec<f64>> = obs
        .iter()
        .map(|o| {
            (0..n)
                .map(|j| gaussian_density_log(o, &params.means[j], &params.variances[j]))
                .collect()
        })
        .collect();
    let mut path = vec![0usize; len];
    let mut terms = Vec::with_capacity(paths as usize);
    for code in 0..paths {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = (c % n as u64) as usize;
            c /= n as u64;
        }
        let mut lp = 0.0;
        for (t, &q) in path.iter().enumerate() {
            lp += if t == 0 {
                params.initial[q].ln()
            } else {
                params.transition[path[t - 1]][q].ln()
            };
            lp += emission[t][q];
        }
        terms.push(lp);
    }
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(max);
    }
    Ok(max + terms.iter().map(|x| (x - max).exp()).sum::<f64>().ln())
}

/// Central-difference gradient of `loss` at `x`.
pub fn finite_diff_gradient<F>(mut loss: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(step > 0.0, "step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = loss(&probe);
            probe[i] = x[i] - step;
            let down = loss(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}
