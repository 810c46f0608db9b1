//! Skip-gram with negative sampling.

use rand::distr::weighted::WeightedIndex;
use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::corpus::{generate_pairs, BoundaryMode, Corpus, Vocab};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub window: usize,
    /// Number of single-pair SGD updates.
    pub steps: usize,
    pub negatives_per_pair: usize,
    pub learning_rate: f64,
    /// The rate decays linearly from `learning_rate` and never drops below this.
    pub min_learning_rate: f64,
    pub noise_exponent: f64,
    pub seed: u64,
    pub boundary: BoundaryMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 128,
            window: 3,
            steps: 100_000,
            negatives_per_pair: 5,
            learning_rate: 0.025,
            min_learning_rate: 0.0001,
            noise_exponent: 0.75,
            seed: 7,
            boundary: BoundaryMode::HardBoundary,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidTrainConfig(m.to_string()));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.window < 1 {
            return bad("window must be at least 1");
        }
        if self.steps < 1 {
            return bad("steps must be at least 1");
        }
        if self.negatives_per_pair < 1 {
            return bad("negatives_per_pair must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.min_learning_rate >= 0.0 && self.min_learning_rate <= self.learning_rate) {
            return bad("min_learning_rate must lie in [0, learning_rate]");
        }
        if !self.noise_exponent.is_finite() {
            return bad("noise_exponent must be finite");
        }
        Ok(())
    }
}

/// Loss and gradients of one positive pair with its negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct SgnsGradient {
    pub loss: f64,
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
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

/// `ln σ(x)` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `L = -ln σ(u_o·v_c) - Σ_n ln σ(-u_n·v_c)` and its gradient with respect to
/// the center vector `v_c`, the positive context vector `u_o` and each
/// negative context vector `u_n`.
pub fn sgns_loss_and_grad(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> SgnsGradient {
    let pos = dot(center, context);
    let mut loss = -log_sigmoid(pos);
    let pos_coef = sigmoid(pos) - 1.0;
    let mut g_center: Vec<f64> = context.iter().map(|u| pos_coef * u).collect();
    let g_context: Vec<f64> = center.iter().map(|v| pos_coef * v).collect();
    let mut g_negs = Vec::with_capacity(negatives.len());
    for neg in negatives {
        let s = dot(center, neg);
        loss -= log_sigmoid(-s);
        let coef = sigmoid(s);
        for (g, u) in g_center.iter_mut().zip(neg.iter()) {
            *g += coef * u;
        }
        g_negs.push(center.iter().map(|v| coef * v).collect());
    }
    SgnsGradient {
        loss,
        center: g_center,
        context: g_context,
        negatives: g_negs,
    }
}

/// Trains center and context vectors for every distinct corpus token.
///
/// All pairs are materialized, shuffled with the seeded generator and
/// consumed one per step; the order is reshuffled each time the list is
/// exhausted. Single-threaded, so results are bit-identical for a seed.
pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<EmbeddingMatrix> {
    config.validate()?;
    let vocab = Vocab::from_corpus(corpus);
    let docs = vocab.encode(corpus);
    let pairs: Vec<(u32, u32)> = generate_pairs(&docs, config.window, config.boundary)?
        .map(|(c, o)| (c as u32, o as u32))
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyPairStream);
    }

    let n = vocab.len();
    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let half = 0.5 / dim as f64;
    let init = Uniform::new_inclusive(-half, half).expect("finite bounds");
    let mut centers: Vec<f64> = (0..n * dim).map(|_| init.sample(&mut rng)).collect();
    let mut contexts = vec![0.0; n * dim];

    let weights: Vec<f64> = vocab
        .counts()
        .iter()
        .map(|&c| (c as f64).powf(config.noise_exponent))
        .collect();
    let noise = WeightedIndex::new(&weights).map_err(|e| Error::InvalidTrainConfig(format!("noise distribution: {e}")))?;

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut cursor = pairs.len();
    let mut neg_ids = Vec::with_capacity(config.negatives_per_pair);
    let mut loss_sum = 0.0;

    for step in 0..config.steps {
        if cursor == order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let (c, o) = pairs[order[cursor]];
        cursor += 1;
        let (c, o) = (c as usize, o as usize);

        let progress = step as f64 / config.steps as f64;
        let lr = (config.learning_rate * (1.0 - progress)).max(config.min_learning_rate);

        neg_ids.clear();
        for _ in 0..config.negatives_per_pair {
            let k = noise.sample(&mut rng);
            // a draw of the positive word is wasted, as in word2vec
            if k != o {
                neg_ids.push(k);
            }
        }

        let grad = {
            let negs: Vec<&[f64]> = neg_ids.iter().map(|&k| &contexts[k * dim..(k + 1) * dim]).collect();
            sgns_loss_and_grad(&centers[c * dim..(c + 1) * dim], &contexts[o * dim..(o + 1) * dim], &negs)
        };
        if !grad.loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        loss_sum += grad.loss;

        for (v, g) in centers[c * dim..(c + 1) * dim].iter_mut().zip(&grad.center) {
            *v -= lr * g;
        }
        for (u, g) in contexts[o * dim..(o + 1) * dim].iter_mut().zip(&grad.context) {
            *u -= lr * g;
        }
        for (&k, g) in neg_ids.iter().zip(&grad.negatives) {
            for (u, gi) in contexts[k * dim..(k + 1) * dim].iter_mut().zip(g) {
                *u -= lr * gi;
            }
        }
        if centers[c * dim..(c + 1) * dim].iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
    }
    log::debug!("sgns: {} steps, mean loss {:.4}", config.steps, loss_sum / config.steps as f64);

    EmbeddingMatrix::with_context(vocab.tokens().to_vec(), dim, centers, contexts)
}
