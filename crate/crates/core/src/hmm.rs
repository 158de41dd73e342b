//! Hidden Markov model with diagonal-Gaussian emissions.
//!
//! Likelihoods are computed with the forward recursion in log space. Parameter
//! estimation is Baum-Welch (EM) with log-space forward-backward posteriors and
//! an element-wise variance floor applied in every M-step.

use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EntryVector;

/// Tolerance on probability vectors summing to one.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Posterior mass below which a state is treated as unused in an M-step.
const MIN_OCCUPANCY: f64 = 1e-300;

const INIT_JITTER: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HmmError {
    #[error("observation has dimension {found}, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("observation sequence is empty")]
    EmptySequence,
    #[error("sequence of length {len} is too short, need at least {required}")]
    TooShort { len: usize, required: usize },
    #[error("invalid HMM parameters: {0}")]
    InvalidParams(String),
    #[error("invalid fit config: {0}")]
    InvalidConfig(String),
}

/// Log-sum-exp of a slice; `-inf` for an empty slice or all `-inf` inputs.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log density of `x` under a diagonal Gaussian.
pub fn diag_gaussian_log_pdf(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((xi, mi), vi) in x.iter().zip(mean).zip(var) {
        let d = xi - mi;
        acc += (2.0 * PI * vi).ln() + d * d / vi;
    }
    -0.5 * acc
}

/// Model parameters: initial distribution, row-stochastic transitions and
/// per-state diagonal Gaussian emissions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub var_floor: f64,
}

impl HmmParams {
    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), HmmError> {
        let n = self.n_states();
        let bad = |m: String| Err(HmmError::InvalidParams(m));
        if n == 0 {
            return bad("no states".into());
        }
        if self.var_floor.is_nan() || self.var_floor <= 0.0 {
            return bad("variance floor must be positive".into());
        }
        if self.transition.len() != n || self.means.len() != n || self.variances.len() != n {
            return bad("per-state arrays disagree on the number of states".into());
        }
        let dim = self.dim();
        if dim == 0 {
            return bad("zero-dimensional emissions".into());
        }
        let stochastic = |row: &[f64]| {
            row.len() == n
                && row.iter().all(|p| (0.0..=1.0).contains(p))
                && (row.iter().sum::<f64>() - 1.0).abs() <= STOCHASTIC_TOL
        };
        if !stochastic(&self.initial) {
            return bad("initial distribution is not a probability vector".into());
        }
        for (i, row) in self.transition.iter().enumerate() {
            if !stochastic(row) {
                return bad(format!("transition row {i} is not stochastic"));
            }
        }
        for (i, (m, v)) in self.means.iter().zip(&self.variances).enumerate() {
            if m.len() != dim || v.len() != dim {
                return bad(format!("state {i} has inconsistent dimension"));
            }
            if !m.iter().all(|x| x.is_finite()) {
                return bad(format!("state {i} has a non-finite mean"));
            }
            if !v.iter().all(|&x| x.is_finite() && x >= self.var_floor) {
                return bad(format!("state {i} has a variance below the floor"));
            }
        }
        Ok(())
    }

    pub fn log_emission(&self, state: usize, obs: &[f64]) -> f64 {
        diag_gaussian_log_pdf(obs, &self.means[state], &self.variances[state])
    }

    fn check_dim(&self, obs: &[EntryVector]) -> Result<(), HmmError> {
        let expected = self.dim();
        match obs.iter().find(|o| o.dim() != expected) {
            Some(o) => Err(HmmError::DimensionMismatch {
                expected,
                found: o.dim(),
            }),
            None => Ok(()),
        }
    }

    fn log_transition(&self) -> Vec<Vec<f64>> {
        self.transition
            .iter()
            .map(|row| row.iter().map(|p| p.ln()).collect())
            .collect()
    }
}

/// `log p(o_1..o_T)` by the forward recursion over unnormalized log
/// forward variables.
pub fn log_likelihood(params: &HmmParams, obs: &[EntryVector]) -> Result<f64, HmmError> {
    if obs.is_empty() {
        return Err(HmmError::EmptySequence);
    }
    params.check_dim(obs)?;
    let n = params.n_states();
    let log_a = params.log_transition();
    let mut alpha: Vec<f64> = (0..n)
        .map(|j| params.initial[j].ln() + params.log_emission(j, &obs[0]))
        .collect();
    let mut terms = vec![0.0; n];
    for o in &obs[1..] {
        let next: Vec<f64> = (0..n)
            .map(|j| {
                for i in 0..n {
                    terms[i] = alpha[i] + log_a[i][j];
                }
                log_sum_exp(&terms) + params.log_emission(j, o)
            })
            .collect();
        alpha = next;
    }
    Ok(log_sum_exp(&alpha))
}

/// Forward filter that can be extended one observation at a time.
///
/// Holds the log of the normalized forward vector (the filtered state
/// posterior) and the cumulative log-likelihood of everything consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardState {
    log_posterior: Vec<f64>,
    log_likelihood: f64,
    steps: usize,
}

impl ForwardState {
    /// State before any observation: log-likelihood 0.
    pub fn new(params: &HmmParams) -> Self {
        Self {
            log_posterior: params.initial.iter().map(|p| p.ln()).collect(),
            log_likelihood: 0.0,
            steps: 0,
        }
    }

    /// Consumes one observation and returns `log p(o | previous)`.
    pub fn extend(&mut self, params: &HmmParams, obs: &[f64]) -> Result<f64, HmmError> {
        if obs.len() != params.dim() {
            return Err(HmmError::DimensionMismatch {
                expected: params.dim(),
                found: obs.len(),
            });
        }
        let n = params.n_states();
        let predicted: Vec<f64> = if self.steps == 0 {
            self.log_posterior.clone()
        } else {
            let mut terms = vec![0.0; n];
            (0..n)
                .map(|j| {
                    for (i, t) in terms.iter_mut().enumerate() {
                        *t = self.log_posterior[i] + params.transition[i][j].ln();
                    }
                    log_sum_exp(&terms)
                })
                .collect()
        };
        let joint: Vec<f64> = predicted
            .iter()
            .enumerate()
            .map(|(j, p)| p + params.log_emission(j, obs))
            .collect();
        let conditional = log_sum_exp(&joint);
        self.log_posterior = joint.iter().map(|x| x - conditional).collect();
        self.log_likelihood += conditional;
        self.steps += 1;
        Ok(conditional)
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Filtered state distribution `p(q_t | o_1..o_t)`; the initial
    /// distribution before any observation.
    pub fn posterior(&self) -> Vec<f64> {
        self.log_posterior.iter().map(|x| x.exp()).collect()
    }
}

pub fn forward_state(params: &HmmParams, prefix: &[EntryVector]) -> Result<ForwardState, HmmError> {
    params.check_dim(prefix)?;
    let mut state = ForwardState::new(params);
    for o in prefix {
        state.extend(params, o)?;
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub n_states: usize,
    pub max_iter: usize,
    /// EM stops once the log-likelihood gain drops below this.
    pub tol: f64,
    pub var_floor: f64,
    pub seed: u64,
    /// Warm-start parameters; replaces the seeded initialization.
    #[serde(skip)]
    pub init: Option<HmmParams>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_states: 2,
            max_iter: 100,
            tol: 1e-4,
            var_floor: 1e-3,
            seed: 42,
            init: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), HmmError> {
        let bad = |m: &str| Err(HmmError::InvalidConfig(m.to_string()));
        if self.n_states == 0 || self.max_iter == 0 {
            return bad("n_states and max_iter must be positive");
        }
        if !(self.tol > 0.0 && self.var_floor > 0.0) {
            return bad("tol and var_floor must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: HmmParams,
    /// Log-likelihood under the parameters entering each EM iteration.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
    /// Every observation was identical while more than one state was
    /// requested; all states collapse onto the same emission.
    pub degenerate: bool,
}

fn sample_variance(obs: &[EntryVector], floor: f64) -> Vec<f64> {
    let dim = obs[0].dim();
    let t = obs.len() as f64;
    (0..dim)
        .map(|d| {
            let mean = obs.iter().map(|o| o[d]).sum::<f64>() / t;
            let var = obs.iter().map(|o| (o[d] - mean).powi(2)).sum::<f64>() / t;
            var.max(floor)
        })
        .collect()
}

fn jittered_uniform(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n)
        .map(|_| 1.0 + INIT_JITTER * rng.random::<f64>())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Farthest-point seeded means, global variances, jittered uniform
/// probabilities.
fn initial_params(obs: &[EntryVector], cfg: &FitConfig) -> HmmParams {
    let n = cfg.n_states;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centers = vec![rng.random_range(0..obs.len())];
    while centers.len() < n {
        let mut best = (0, f64::NEG_INFINITY);
        for (t, o) in obs.iter().enumerate() {
            let d = centers
                .iter()
                .map(|&c| squared_distance(o, &obs[c]))
                .fold(f64::INFINITY, f64::min);
            if d > best.1 {
                best = (t, d);
            }
        }
        centers.push(best.0);
    }
    let variances = sample_variance(obs, cfg.var_floor);
    HmmParams {
        initial: jittered_uniform(n, &mut rng),
        transition: (0..n).map(|_| jittered_uniform(n, &mut rng)).collect(),
        means: centers.iter().map(|&c| obs[c].0.clone()).collect(),
        variances: vec![variances; n],
        var_floor: cfg.var_floor,
    }
}

struct Posteriors {
    log_likelihood: f64,
    /// `gamma[t][j] = p(q_t = j | o)`.
    gamma: Vec<Vec<f64>>,
    /// `sum_t p(q_t = i, q_{t+1} = j | o)`.
    xi_sum: Vec<Vec<f64>>,
}

fn forward_backward(params: &HmmParams, obs: &[EntryVector]) -> Posteriors {
    let n = params.n_states();
    let len = obs.len();
    let log_a = params.log_transition();
    let log_b: Vec<Vec<f64>> = obs
        .iter()
        .map(|o| (0..n).map(|j| params.log_emission(j, o)).collect())
        .collect();

    let mut terms = vec![0.0; n];
    let mut alpha = vec![vec![0.0; n]; len];
    for j in 0..n {
        alpha[0][j] = params.initial[j].ln() + log_b[0][j];
    }
    for t in 1..len {
        for j in 0..n {
            for i in 0..n {
                terms[i] = alpha[t - 1][i] + log_a[i][j];
            }
            alpha[t][j] = log_sum_exp(&terms) + log_b[t][j];
        }
    }
    let mut beta = vec![vec![0.0; n]; len];
    for t in (0..len - 1).rev() {
        for i in 0..n {
            for j in 0..n {
                terms[j] = log_a[i][j] + log_b[t + 1][j] + beta[t + 1][j];
            }
            beta[t][i] = log_sum_exp(&terms);
        }
    }
    let ll = log_sum_exp(&alpha[len - 1]);

    let gamma = (0..len)
        .map(|t| {
            (0..n)
                .map(|j| (alpha[t][j] + beta[t][j] - ll).exp())
                .collect()
        })
        .collect();
    let mut xi_sum = vec![vec![0.0; n]; n];
    for t in 0..len - 1 {
        for i in 0..n {
            for j in 0..n {
                xi_sum[i][j] +=
                    (alpha[t][i] + log_a[i][j] + log_b[t + 1][j] + beta[t + 1][j] - ll).exp();
            }
        }
    }
    Posteriors {
        log_likelihood: ll,
        gamma,
        xi_sum,
    }
}

fn normalized(row: &[f64]) -> Vec<f64> {
    let total: f64 = row.iter().sum();
    row.iter().map(|x| x / total).collect()
}

/// Closed-form re-estimation. States (or rows) without posterior mass keep
/// their previous values.
fn m_step(prev: &HmmParams, obs: &[EntryVector], post: &Posteriors) -> HmmParams {
    let n = prev.n_states();
    let dim = prev.dim();
    let floor = prev.var_floor;
    let mut next = prev.clone();

    next.initial = normalized(&post.gamma[0]);
    for i in 0..n {
        let total: f64 = post.xi_sum[i].iter().sum();
        if total > MIN_OCCUPANCY {
            next.transition[i] = normalized(&post.xi_sum[i]);
        }
    }
    for j in 0..n {
        let weight: f64 = post.gamma.iter().map(|g| g[j]).sum();
        if weight <= MIN_OCCUPANCY {
            continue;
        }
        let mut mean = vec![0.0; dim];
        for (g, o) in post.gamma.iter().zip(obs) {
            for (m, x) in mean.iter_mut().zip(o.iter()) {
                *m += g[j] * x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= weight);
        let mut var = vec![0.0; dim];
        for (g, o) in post.gamma.iter().zip(obs) {
            for ((v, x), m) in var.iter_mut().zip(o.iter()).zip(&mean) {
                *v += g[j] * (x - m).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v = (*v / weight).max(floor));
        next.means[j] = mean;
        next.variances[j] = var;
    }
    next
}

/// Baum-Welch estimation on one observation sequence.
///
/// Runs until `max_iter` iterations or until the log-likelihood gain between
/// consecutive iterations falls below `tol`. The returned parameters are the
/// result of the last M-step.
pub fn fit_baum_welch(obs: &[EntryVector], cfg: &FitConfig) -> Result<FitResult, HmmError> {
    cfg.validate()?;
    let n = cfg.init.as_ref().map_or(cfg.n_states, HmmParams::n_states);
    let required = n.max(2);
    if obs.len() < required {
        return Err(HmmError::TooShort {
            len: obs.len(),
            required,
        });
    }
    let dim = obs[0].dim();
    if dim == 0 {
        return Err(HmmError::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    if let Some(o) = obs.iter().find(|o| o.dim() != dim) {
        return Err(HmmError::DimensionMismatch {
            expected: dim,
            found: o.dim(),
        });
    }
    let mut params = match &cfg.init {
        Some(init) => {
            init.validate()?;
            init.check_dim(obs)?;
            init.clone()
        }
        None => initial_params(obs, cfg),
    };
    let degenerate = n > 1 && obs.iter().all(|o| o.0 == obs[0].0);

    let mut log_likelihoods = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let post = forward_backward(&params, obs);
        log_likelihoods.push(post.log_likelihood);
        params = m_step(&params, obs, &post);
        debug_assert!(params.validate().is_ok());
        if let [.., prev, last] = log_likelihoods[..] {
            if last - prev < cfg.tol {
                converged = true;
                break;
            }
        }
    }
    Ok(FitResult {
        params,
        log_likelihoods,
        converged,
        degenerate,
    })
}

/// Draws a state path and observations from the model.
pub fn sample(params: &HmmParams, len: usize, seed: u64) -> Vec<EntryVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial = WeightedIndex::new(&params.initial).expect("valid initial distribution");
    let rows: Vec<WeightedIndex<f64>> = params
        .transition
        .iter()
        .map(|r| WeightedIndex::new(r).expect("valid transition row"))
        .collect();
    let mut state = initial.sample(&mut rng);
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        if t > 0 {
            state = rows[state].sample(&mut rng);
        }
        let v = params.means[state]
            .iter()
            .zip(&params.variances[state])
            .map(|(&m, &var)| {
                Normal::new(m, var.sqrt())
                    .expect("finite mean and variance")
                    .sample(&mut rng)
            })
            .collect();
        out.push(EntryVector(v));
    }
    out
}
