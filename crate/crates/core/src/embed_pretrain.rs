//! Skip-gram word vectors trained with negative sampling.
//!
//! For each (center, context) pair inside a randomly shrunk window the
//! update ascends `log σ(u_o·v_c) + Σ_k log σ(−u_k·v_c)` with negatives drawn
//! from the unigram distribution raised to 0.75. The learning rate decays
//! linearly over all training tokens.

use std::collections::HashMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::PretrainedEmbeddings;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub window: usize,
    pub negatives: usize,
    pub lr: f64,
    pub min_count: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            dim: 200,
            epochs: 30,
            window: 5,
            negatives: 5,
            lr: 0.025,
            min_count: 5,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.negatives == 0 || self.min_count == 0 {
            return Err(Error::InvalidArgument(
                "dimension, window, negatives and min count must be positive".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trains center vectors over `corpus` (one token list per document).
/// Tokens are ordered by descending count, ties lexicographically.
pub fn skipgram_train(corpus: &[Vec<String>], cfg: &PretrainConfig) -> Result<PretrainedEmbeddings> {
    cfg.validate()?;
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for doc in corpus {
        for t in doc {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut vocab: Vec<(&str, u64)> = counts.into_iter().filter(|&(_, c)| c as usize >= cfg.min_count).collect();
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    if vocab.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no token occurs at least {} times",
            cfg.min_count
        )));
    }
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, (t, _))| (*t, i)).collect();
    let docs: Vec<Vec<usize>> = corpus
        .iter()
        .map(|d| d.iter().filter_map(|t| index.get(t.as_str()).copied()).collect())
        .collect();

    let (n, e) = (vocab.len(), cfg.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 0.5 / e as f64;
    let mut centers: Vec<f64> = (0..n * e).map(|_| rng.gen_range(-bound..bound)).collect();
    let mut contexts = vec![0.0; n * e];
    let noise = WeightedIndex::new(vocab.iter().map(|&(_, c)| (c as f64).powf(0.75))).expect("positive weights");

    let total = docs.iter().map(Vec::len).sum::<usize>() * cfg.epochs;
    let mut processed = 0usize;
    let mut grad = vec![0.0; e];
    for _ in 0..cfg.epochs {
        for doc in &docs {
            for (pos, &c) in doc.iter().enumerate() {
                let lr = cfg.lr * (1.0 - processed as f64 / (total + 1) as f64).max(1e-4);
                processed += 1;
                let b = rng.gen_range(1..=cfg.window);
                let lo = pos.saturating_sub(b);
                let hi = (pos + b).min(doc.len() - 1);
                for (ctx_pos, &o) in doc.iter().enumerate().take(hi + 1).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let v = c * e..(c + 1) * e;
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (o, 1.0)
                        } else {
                            let t = noise.sample(&mut rng);
                            if t == o {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let u = target * e..(target + 1) * e;
                        let step = lr * (label - sigmoid(dot(&centers[v.clone()], &contexts[u.clone()])));
                        for ((g, cu), cv) in grad.iter_mut().zip(&mut contexts[u]).zip(&centers[v.clone()]) {
                            *g += step * *cu;
                            *cu += step * cv;
                        }
                    }
                    for (cv, g) in centers[v].iter_mut().zip(&grad) {
                        *cv += g;
                    }
                }
            }
        }
    }
    let tokens = vocab.iter().map(|(t, _)| t.to_string()).collect();
    PretrainedEmbeddings::new(e, tokens, centers)
}
