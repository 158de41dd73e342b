//! CBOW word embeddings trained with negative sampling, and mean pooling of
//! token vectors into one vector per log entry.

use std::collections::{BTreeMap, HashMap};
use std::ops::Deref;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::{TokenSequence, UNKNOWN};

/// Id of the reserved out-of-vocabulary token.
pub const UNKNOWN_ID: usize = 0;

const NOISE_EXPONENT: f64 = 0.75;

#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error("corpus contains no tokens")]
    EmptyCorpus,
    #[error("query vector has zero norm")]
    ZeroVector,
    #[error("invalid embedding config: {0}")]
    InvalidConfig(String),
}

/// Dense vector for one log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntryVector(pub Vec<f64>);

impl EntryVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl Deref for EntryVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for EntryVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct VocabRecord {
    token: String,
    count: u64,
}

/// Token to id mapping. Id 0 is always `$unk`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "Vec<VocabRecord>", into = "Vec<VocabRecord>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    ids: HashMap<String, usize>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.counts == other.counts
    }
}

impl From<Vec<VocabRecord>> for Vocabulary {
    fn from(records: Vec<VocabRecord>) -> Self {
        let (tokens, counts): (Vec<_>, Vec<_>) =
            records.into_iter().map(|r| (r.token, r.count)).unzip();
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            counts,
            ids,
        }
    }
}

impl From<Vocabulary> for Vec<VocabRecord> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
            .into_iter()
            .zip(v.counts)
            .map(|(token, count)| VocabRecord { token, count })
            .collect()
    }
}

impl Vocabulary {
    /// Counts tokens and assigns ids by descending count, then
    /// lexicographically. Tokens seen fewer than `min_count` times fold into
    /// `$unk`.
    pub fn build(corpus: &[TokenSequence], min_count: u64) -> Self {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for seq in corpus {
            for t in seq.iter() {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut unk_count = counts.remove(UNKNOWN).unwrap_or(0);
        let mut kept: Vec<(&str, u64)> = Vec::new();
        for (t, c) in counts {
            if c >= min_count {
                kept.push((t, c));
            } else {
                unk_count += c;
            }
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut records = vec![VocabRecord {
            token: UNKNOWN.to_string(),
            count: unk_count,
        }];
        records.extend(kept.into_iter().map(|(t, c)| VocabRecord {
            token: t.to_string(),
            count: c,
        }));
        records.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false: `$unk` is present.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or `UNKNOWN_ID` when it is not in the vocabulary.
    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNKNOWN_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

pub fn build_vocab(corpus: &[TokenSequence], min_count: u64) -> Vocabulary {
    Vocabulary::build(corpus, min_count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub dim: usize,
    /// Context radius on each side of the target.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Lower bound of the linearly decayed learning rate.
    pub min_learning_rate: f64,
    pub min_count: u64,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            window: 2,
            negatives: 5,
            epochs: 50,
            learning_rate: 0.025,
            min_learning_rate: 1e-4,
            min_count: 1,
            seed: 42,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: &str| Err(EmbedError::InvalidConfig(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.negatives == 0 || self.epochs == 0 || self.min_count == 0 {
            return bad("negatives, epochs and min_count must be positive");
        }
        if !(self.learning_rate > 0.0 && self.min_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }
}

/// Trained token vectors.
///
/// `input` rows are the embeddings used downstream; `output` rows are the
/// negative-sampling weights. Both are `len(vocab) x dim`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub vocab: Vocabulary,
    pub dim: usize,
    pub input: Vec<Vec<f64>>,
    pub output: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn vector(&self, token: &str) -> &[f64] {
        &self.input[self.vocab.id(token)]
    }

    pub fn is_finite(&self) -> bool {
        self.input
            .iter()
            .chain(&self.output)
            .all(|row| row.iter().all(|x| x.is_finite()))
    }
}

/// One CBOW training instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CbowExample {
    pub context: Vec<usize>,
    pub target: usize,
    pub negatives: Vec<usize>,
}

/// Gradient of the negative-sampling loss for one example.
///
/// Each context occurrence receives `hidden / context.len()`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CbowGradient {
    /// Gradient with respect to the mean context vector.
    pub hidden: Vec<f64>,
    /// Gradients for the output rows of the target and each negative, in
    /// that order. Ids may repeat.
    pub output: Vec<(usize, Vec<f64>)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn context_mean(input: &[Vec<f64>], context: &[usize], dim: usize) -> Vec<f64> {
    let mut h = vec![0.0; dim];
    for &c in context {
        for (acc, x) in h.iter_mut().zip(&input[c]) {
            *acc += x;
        }
    }
    let n = context.len() as f64;
    h.iter_mut().for_each(|x| *x /= n);
    h
}

/// Negative-sampling loss
/// `-ln σ(u_target·h) - Σ ln σ(-u_neg·h)` with `h` the mean context vector.
pub fn cbow_loss(input: &[Vec<f64>], output: &[Vec<f64>], ex: &CbowExample) -> f64 {
    let dim = input.first().map_or(0, Vec::len);
    let h = context_mean(input, &ex.context, dim);
    let mut loss = softplus(-dot(&output[ex.target], &h));
    for &n in &ex.negatives {
        loss += softplus(dot(&output[n], &h));
    }
    loss
}

/// Loss and analytic gradient for one example.
pub fn cbow_gradient(
    input: &[Vec<f64>],
    output: &[Vec<f64>],
    ex: &CbowExample,
) -> (f64, CbowGradient) {
    let dim = input.first().map_or(0, Vec::len);
    let h = context_mean(input, &ex.context, dim);
    let mut grad = CbowGradient {
        hidden: vec![0.0; dim],
        output: Vec::with_capacity(1 + ex.negatives.len()),
    };
    let mut loss = 0.0;
    let labelled = std::iter::once((ex.target, 1.0)).chain(ex.negatives.iter().map(|&n| (n, 0.0)));
    for (id, label) in labelled {
        let score = dot(&output[id], &h);
        loss += if label > 0.0 {
            softplus(-score)
        } else {
            softplus(score)
        };
        let g = sigmoid(score) - label;
        for (acc, u) in grad.hidden.iter_mut().zip(&output[id]) {
            *acc += g * u;
        }
        grad.output.push((id, h.iter().map(|x| g * x).collect()));
    }
    (loss, grad)
}

fn apply_gradient(
    input: &mut [Vec<f64>],
    output: &mut [Vec<f64>],
    ex: &CbowExample,
    grad: &CbowGradient,
    lr: f64,
) {
    for (id, g) in &grad.output {
        for (u, gi) in output[*id].iter_mut().zip(g) {
            *u -= lr * gi;
        }
    }
    let share = lr / ex.context.len() as f64;
    for &c in &ex.context {
        for (v, gi) in input[c].iter_mut().zip(&grad.hidden) {
            *v -= share * gi;
        }
    }
}

/// Embedding table plus the mean per-example loss of every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedEmbedding {
    pub table: EmbeddingTable,
    pub epoch_losses: Vec<f64>,
}

pub fn train_cbow(
    corpus: &[TokenSequence],
    cfg: &EmbedConfig,
) -> Result<EmbeddingTable, EmbedError> {
    train_cbow_with_stats(corpus, cfg).map(|t| t.table)
}

/// Trains CBOW embeddings with negative sampling.
///
/// Sequences are visited in corpus order each epoch. The learning rate
/// decays linearly over all positions of all epochs down to
/// `min_learning_rate`. Negatives are drawn from unigram counts raised to
/// 3/4; a draw equal to the target is discarded.
pub fn train_cbow_with_stats(
    corpus: &[TokenSequence],
    cfg: &EmbedConfig,
) -> Result<TrainedEmbedding, EmbedError> {
    cfg.validate()?;
    if corpus.iter().all(TokenSequence::is_empty) {
        return Err(EmbedError::EmptyCorpus);
    }
    let vocab = Vocabulary::build(corpus, cfg.min_count);
    let ids: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| s.iter().map(|t| vocab.id(t)).collect())
        .collect();

    let dim = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 0.5 / dim as f64;
    let mut input: Vec<Vec<f64>> = (0..vocab.len())
        .map(|_| (0..dim).map(|_| rng.random_range(-bound..bound)).collect())
        .collect();
    let mut output = vec![vec![0.0; dim]; vocab.len()];

    let weights: Vec<f64> = (0..vocab.len())
        .map(|i| (vocab.count(i) as f64).powf(NOISE_EXPONENT))
        .collect();
    // At least one token has a positive count since the corpus is non-empty.
    let noise = WeightedIndex::new(&weights).expect("positive noise weights");

    let positions: usize = ids.iter().map(Vec::len).sum();
    let total = (positions * cfg.epochs) as f64;
    let mut done = 0usize;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut ex = CbowExample {
        context: Vec::with_capacity(2 * cfg.window),
        target: 0,
        negatives: Vec::with_capacity(cfg.negatives),
    };

    for _ in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut examples = 0usize;
        for seq in &ids {
            for (t, &target) in seq.iter().enumerate() {
                let lr =
                    (cfg.learning_rate * (1.0 - done as f64 / total)).max(cfg.min_learning_rate);
                done += 1;
                let lo = t.saturating_sub(cfg.window);
                let hi = (t + cfg.window + 1).min(seq.len());
                ex.context.clear();
                ex.context
                    .extend((lo..hi).filter(|&j| j != t).map(|j| seq[j]));
                if ex.context.is_empty() {
                    continue;
                }
                ex.target = target;
                ex.negatives.clear();
                for _ in 0..cfg.negatives {
                    let n = noise.sample(&mut rng);
                    if n != target {
                        ex.negatives.push(n);
                    }
                }
                let (loss, grad) = cbow_gradient(&input, &output, &ex);
                apply_gradient(&mut input, &mut output, &ex, &grad, lr);
                loss_sum += loss;
                examples += 1;
            }
        }
        epoch_losses.push(if examples == 0 {
            0.0
        } else {
            loss_sum / examples as f64
        });
    }

    Ok(TrainedEmbedding {
        table: EmbeddingTable {
            vocab,
            dim,
            input,
            output,
        },
        epoch_losses,
    })
}

/// Mean of the input vectors of `tokens`; unknown tokens use the `$unk`
/// row and an empty sequence maps to the `$unk` row itself.
pub fn embed_entry(tokens: &TokenSequence, table: &EmbeddingTable) -> EntryVector {
    if tokens.is_empty() {
        return EntryVector(table.input[UNKNOWN_ID].clone());
    }
    let mut v = vec![0.0; table.dim];
    for t in tokens.iter() {
        for (acc, x) in v.iter_mut().zip(&table.input[table.vocab.id(t)]) {
            *acc += x;
        }
    }
    let n = tokens.len() as f64;
    v.iter_mut().for_each(|x| *x /= n);
    EntryVector(v)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Top-`k` tokens by cosine similarity to `query`, ties broken by id.
pub fn nearest_neighbors(
    query: &[f64],
    table: &EmbeddingTable,
    k: usize,
) -> Result<Vec<(String, f64)>, EmbedError> {
    if dot(query, query) == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    let mut scored: Vec<(usize, f64)> = table
        .input
        .iter()
        .enumerate()
        .map(|(id, row)| (id, cosine(query, row)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(id, s)| (table.vocab.token(id).to_string(), s))
        .collect())
}
