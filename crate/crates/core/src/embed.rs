//! Unsupervised token embeddings and SIF day vectors.
//!
//! Skip-gram with negative sampling learns one table per categorical field
//! from per-day token sequences. A day vector is the `a / (a + p(w))`
//! weighted mean of its token vectors; the collection's first singular
//! direction is then projected out.

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Field;
use crate::rng::{self, tags};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("vocabulary of size {0} leaves no negative samples")]
    VocabularyTooSmall(usize),
    #[error("token {token} outside vocabulary of size {vocab}")]
    TokenRange { token: u32, vocab: usize },
    #[error("invalid parameter: {0}")]
    Params(String),
    #[error("power iteration did not converge after {iterations} iterations (last change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt table: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub field: Field,
    pub vocab_size: usize,
    pub dim: usize,
    pub seed: u64,
    /// Row-major `vocab_size x dim`.
    pub data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn row(&self, token: u32) -> &[f64] {
        let i = token as usize * self.dim;
        &self.data[i..i + self.dim]
    }

    /// Writes `<stem>.json` (manifest) and `<stem>.bin` (little-endian f64, row-major).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), EmbedError> {
        std::fs::create_dir_all(dir)?;
        let manifest = TableManifest {
            field: self.field,
            vocab_size: self.vocab_size,
            dim: self.dim,
            seed: self.seed,
        };
        let mut f = std::fs::File::create(dir.join(format!("{stem}.json")))?;
        writeln!(f, "{}", serde_json::to_string_pretty(&manifest).expect("serialisable"))?;
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(dir.join(format!("{stem}.bin")), bytes)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self, EmbedError> {
        let text = std::fs::read_to_string(dir.join(format!("{stem}.json")))?;
        let m: TableManifest = serde_json::from_str(&text).map_err(|e| EmbedError::Corrupt(e.to_string()))?;
        let bytes = std::fs::read(dir.join(format!("{stem}.bin")))?;
        if bytes.len() != m.vocab_size * m.dim * 8 {
            return Err(EmbedError::Corrupt(format!(
                "expected {} bytes, found {}",
                m.vocab_size * m.dim * 8,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { field: m.field, vocab_size: m.vocab_size, dim: m.dim, seed: m.seed, data })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TableManifest {
    field: Field,
    vocab_size: usize,
    dim: usize,
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkipGramParams {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial step size, decayed linearly towards `lr * 1e-4`.
    pub lr: f64,
    pub seed: u64,
}

impl SkipGramParams {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, window: 5, negatives: 5, epochs: 5, lr: 0.025, seed }
    }
}

#[derive(Debug, Clone)]
pub struct SkipGramOutcome {
    pub table: EmbeddingTable,
    /// Objective after each epoch, scored on a fixed negative-sample stream.
    pub epoch_loss: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean negative-sampling loss per (center, context) pair. Negatives come
/// from a fixed stream so that successive epochs are scored on the same draws.
fn objective(corpus: &[Vec<u32>], input: &[f64], output: &[f64], noise: &WeightedAliasIndex<f64>, params: &SkipGramParams) -> f64 {
    let dim = params.dim;
    let mut rng = rng::substream(params.seed, &[tags::SKIPGRAM, 1]);
    let mut loss = 0.0;
    let mut n_pairs = 0usize;
    for sentence in corpus {
        for (i, &center) in sentence.iter().enumerate() {
            let lo = i.saturating_sub(params.window);
            let hi = (i + params.window + 1).min(sentence.len());
            let ci = center as usize * dim;
            for (j, &context) in sentence.iter().enumerate().take(hi).skip(lo) {
                if j == i {
                    continue;
                }
                let ti = context as usize * dim;
                loss -= sigmoid(dot(&input[ci..ci + dim], &output[ti..ti + dim])).max(1e-300).ln();
                for _ in 0..params.negatives {
                    let neg = noise.sample(&mut rng);
                    if neg == context as usize {
                        continue;
                    }
                    let ni = neg * dim;
                    loss -= (1.0 - sigmoid(dot(&input[ci..ci + dim], &output[ni..ni + dim]))).max(1e-300).ln();
                }
                n_pairs += 1;
            }
        }
    }
    if n_pairs > 0 { loss / n_pairs as f64 } else { 0.0 }
}

/// Skip-gram with negative sampling; noise distribution ∝ count^0.75.
pub fn train_skipgram(
    corpus: &[Vec<u32>],
    vocab_size: usize,
    field: Field,
    params: &SkipGramParams,
) -> Result<SkipGramOutcome, EmbedError> {
    let total: usize = corpus.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(EmbedError::EmptyCorpus);
    }
    if vocab_size < 2 {
        return Err(EmbedError::VocabularyTooSmall(vocab_size));
    }
    if params.dim == 0 || params.window == 0 {
        return Err(EmbedError::Params("dim and window must be positive".into()));
    }
    let mut counts = vec![0.0f64; vocab_size];
    for &t in corpus.iter().flatten() {
        let slot = counts
            .get_mut(t as usize)
            .ok_or(EmbedError::TokenRange { token: t, vocab: vocab_size })?;
        *slot += 1.0;
    }
    if counts.iter().filter(|&&c| c > 0.0).count() < 2 {
        return Err(EmbedError::VocabularyTooSmall(1));
    }
    let noise = WeightedAliasIndex::new(counts.iter().map(|c| c.powf(0.75)).collect::<Vec<_>>())
        .map_err(|e| EmbedError::Params(e.to_string()))?;

    let dim = params.dim;
    let mut rng = rng::substream(params.seed, &[tags::SKIPGRAM]);
    let half = 0.5 / dim as f64;
    let mut input: Vec<f64> = (0..vocab_size * dim).map(|_| rng.random_range(-half..half)).collect();
    let mut output = vec![0.0f64; vocab_size * dim];
    let mut epoch_loss = Vec::with_capacity(params.epochs);

    let pairs_per_epoch: usize = corpus
        .iter()
        .map(|s| {
            (0..s.len())
                .map(|i| i.min(params.window) + (s.len() - 1 - i).min(params.window))
                .sum::<usize>()
        })
        .sum();
    let total_steps = (pairs_per_epoch * params.epochs).max(1) as f64;
    let mut step = 0usize;
    let mut grad_in = vec![0.0f64; dim];
    for _ in 0..params.epochs {
        for sentence in corpus {
            for (i, &center) in sentence.iter().enumerate() {
                let lo = i.saturating_sub(params.window);
                let hi = (i + params.window + 1).min(sentence.len());
                for (j, &context) in sentence.iter().enumerate().take(hi).skip(lo) {
                    if j == i {
                        continue;
                    }
                    let lr = params.lr * (1.0 - step as f64 / total_steps).max(1e-4);
                    step += 1;
                    let ci = center as usize * dim;
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    for k in 0..=params.negatives {
                        let (target, label) = if k == 0 {
                            (context as usize, 1.0)
                        } else {
                            let neg = noise.sample(&mut rng);
                            if neg == context as usize {
                                continue;
                            }
                            (neg, 0.0)
                        };
                        let ti = target * dim;
                        let score = dot(&input[ci..ci + dim], &output[ti..ti + dim]);
                        let g = lr * (label - sigmoid(score));
                        for d in 0..dim {
                            grad_in[d] += g * output[ti + d];
                            output[ti + d] += g * input[ci + d];
                        }
                    }
                    for d in 0..dim {
                        input[ci + d] += grad_in[d];
                    }
                }
            }
        }
        epoch_loss.push(objective(corpus, &input, &output, &noise, params));
    }
    Ok(SkipGramOutcome {
        table: EmbeddingTable { field, vocab_size, dim, seed: params.seed, data: input },
        epoch_loss,
    })
}

/// Empirical unigram distribution over a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenFrequency {
    pub p: Vec<f64>,
}

pub fn token_frequency(corpus: &[Vec<u32>], vocab_size: usize) -> Result<TokenFrequency, EmbedError> {
    let mut counts = vec![0usize; vocab_size];
    let mut total = 0usize;
    for &t in corpus.iter().flatten() {
        *counts
            .get_mut(t as usize)
            .ok_or(EmbedError::TokenRange { token: t, vocab: vocab_size })? += 1;
        total += 1;
    }
    if total == 0 {
        return Err(EmbedError::EmptyCorpus);
    }
    Ok(TokenFrequency { p: counts.into_iter().map(|c| c as f64 / total as f64).collect() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SifConfig {
    pub a: f64,
}

impl SifConfig {
    pub fn new(a: f64) -> Result<Self, EmbedError> {
        if a > 0.0 && a.is_finite() {
            Ok(Self { a })
        } else {
            Err(EmbedError::Params(format!("SIF smoothing a must be > 0, got {a}")))
        }
    }
}

/// Grid searched for the smoothing parameter.
pub const SIF_A_GRID: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];

pub fn sif_weight(a: f64, p: f64) -> f64 {
    a / (a + p)
}

/// Weighted mean of one field's token vectors.
pub fn sif_field_embedding(
    tokens: &[u32],
    table: &EmbeddingTable,
    freq: &TokenFrequency,
    cfg: SifConfig,
) -> Vec<f64> {
    let mut out = vec![0.0; table.dim];
    if tokens.is_empty() {
        return out;
    }
    for &t in tokens {
        let w = sif_weight(cfg.a, freq.p.get(t as usize).copied().unwrap_or(0.0));
        for (o, v) in out.iter_mut().zip(table.row(t)) {
            *o += w * v;
        }
    }
    let n = tokens.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// SIF vector of a day: per-field weighted means, concatenated in field order.
pub fn sif_day_embedding(
    fields: &[(&[u32], &EmbeddingTable, &TokenFrequency)],
    cfg: SifConfig,
) -> Vec<f64> {
    fields
        .iter()
        .flat_map(|(tokens, table, freq)| sif_field_embedding(tokens, table, freq, cfg))
        .collect()
}

pub const POWER_TOL: f64 = 1e-9;
pub const POWER_MAX_ITER: usize = 1000;

fn normalise(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn gram(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut g = vec![0.0; dim * dim];
    for r in rows {
        for i in 0..dim {
            let ri = r[i];
            if ri == 0.0 {
                continue;
            }
            for j in 0..dim {
                g[i * dim + j] += ri * r[j];
            }
        }
    }
    g
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d).map(|i| dot(&m[i * d..(i + 1) * d], v)).collect()
}

/// Leading eigenvector of a symmetric PSD matrix by power iteration.
fn power_iteration(m: &[f64], dim: usize, seed: u64) -> Result<(Vec<f64>, f64), EmbedError> {
    let mut rng = rng::substream(seed, &[tags::POWER_ITER]);
    let mut u: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalise(&mut u);
    let mut change = f64::INFINITY;
    for it in 1..=POWER_MAX_ITER {
        let mut next = mat_vec(m, &u);
        let lambda = normalise(&mut next);
        if lambda == 0.0 {
            return Ok((u, 0.0));
        }
        change = next.iter().zip(&u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        u = next;
        if change <= POWER_TOL {
            log::debug!("power iteration converged after {it} iterations");
            return Ok((u, lambda));
        }
    }
    Err(EmbedError::NoConvergence { iterations: POWER_MAX_ITER, change })
}

/// First right singular vector of `rows` (unit norm, sign unspecified).
pub fn first_singular_vector(rows: &[Vec<f64>]) -> Result<Vec<f64>, EmbedError> {
    let dim = rows.first().map_or(0, Vec::len);
    let g = gram(rows, dim);
    let (u, lambda) = power_iteration(&g, dim, 0)?;
    if lambda > 0.0 {
        // Second eigenvalue by deflation, to flag a degenerate top.
        let mut deflated = g.clone();
        for i in 0..dim {
            for j in 0..dim {
                deflated[i * dim + j] -= lambda * u[i] * u[j];
            }
        }
        if let Ok((_, lambda2)) = power_iteration(&deflated, dim, 1) {
            if (lambda - lambda2).abs() <= 1e-9 * lambda {
                log::warn!("top singular values are (nearly) equal; removed direction is not unique");
            }
        }
    } else {
        log::warn!("zero matrix: no singular direction to remove");
    }
    Ok(u)
}

/// Projects each row onto the orthogonal complement of `u`.
pub fn project_out(rows: &[Vec<f64>], u: &[f64]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let c = dot(r, u);
            r.iter().zip(u).map(|(x, ui)| x - c * ui).collect()
        })
        .collect()
}

/// Removes each row's projection on the matrix's first right singular vector.
pub fn remove_first_component(rows: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<f64>), EmbedError> {
    if rows.len() < 2 {
        return Err(EmbedError::TooFewRows { needed: 2, got: rows.len() });
    }
    let u = first_singular_vector(rows)?;
    Ok((project_out(rows, &u), u))
}
