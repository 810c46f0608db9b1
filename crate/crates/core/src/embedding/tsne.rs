//! Exact t-SNE (no Barnes-Hut), sized for vocabularies of a few hundred
//! classes.

use image::{Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Upper bound on exaggerated iterations; never more than a quarter of `iters`.
    pub exaggeration_iters: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iters: 1000,
            seed: 7,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneProjection {
    pub tokens: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    /// KL(P || Q) after every iteration, measured without exaggeration.
    pub kl_history: Vec<f64>,
}

impl TsneProjection {
    /// One `token x y` line per row.
    pub fn to_text(&self) -> String {
        self.tokens
            .iter()
            .zip(&self.coords)
            .map(|(t, [x, y])| format!("{t} {x} {y}\n"))
            .collect()
    }
}

pub fn project_tsne(emb: &EmbeddingMatrix, config: &TsneConfig) -> Result<TsneProjection> {
    let rows: Vec<&[f64]> = (0..emb.len()).map(|i| emb.row(i)).collect();
    let (coords, kl_history) = tsne(&rows, config)?;
    Ok(TsneProjection {
        tokens: emb.vocab().to_vec(),
        coords,
        kl_history,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Conditional probabilities of row `i` for a Gaussian with precision `beta`;
/// returns the entropy in nats.
fn conditional_row(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    // shift by the smallest off-diagonal distance so at least one term is 1
    let min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (&d, p)) in dist.iter().zip(out.iter_mut()).enumerate() {
        *p = if j == i { 0.0 } else { (-(d - min) * beta).exp() };
        sum += *p;
    }
    let mut weighted = 0.0;
    for (&d, p) in dist.iter().zip(out.iter_mut()) {
        *p /= sum;
        weighted += *p * (d - min);
    }
    sum.ln() + beta * weighted
}

fn joint_probabilities(data: &[&[f64]], perplexity: f64) -> Vec<f64> {
    let n = data.len();
    let target = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    let mut dist = vec![0.0; n];
    for i in 0..n {
        for (j, d) in dist.iter_mut().enumerate() {
            *d = sq_dist(data[i], data[j]);
        }
        let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
        let row = &mut cond[i * n..(i + 1) * n];
        for _ in 0..200 {
            let h = conditional_row(&dist, i, beta, row);
            let diff = h - target;
            if diff.abs() < 1e-10 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }
    p
}

/// Student-t affinities; returns unnormalized kernel values and their sum.
fn kernel(y: &[[f64; 2]], num: &mut [f64]) -> f64 {
    let n = y.len();
    let mut total = 0.0;
    for i in 0..n {
        num[i * n + i] = 0.0;
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let k = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = k;
            num[j * n + i] = k;
            total += 2.0 * k;
        }
    }
    total
}

fn kl_divergence(p: &[f64], num: &[f64], total: f64) -> f64 {
    p.iter()
        .zip(num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &k)| pij * (pij / (k / total).max(1e-12)).ln())
        .sum()
}

/// Embeds `data` rows into the plane. Returns the coordinates and the KL
/// history (one value per iteration).
pub fn tsne(data: &[&[f64]], config: &TsneConfig) -> Result<(Vec<[f64; 2]>, Vec<f64>)> {
    let n = data.len();
    if n < 4 {
        return Err(Error::TooFewPoints(n));
    }
    if !(config.perplexity >= 1.0 && config.perplexity < (n - 1) as f64) {
        return Err(Error::InfeasiblePerplexity {
            perplexity: config.perplexity,
            points: n,
        });
    }
    if config.perplexity >= n as f64 / 3.0 {
        log::warn!(
            "perplexity {} is large for {} points; consider < {:.1}",
            config.perplexity,
            n,
            n as f64 / 3.0
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    if config.iters == 0 {
        return Ok((y, Vec::new()));
    }

    let p = joint_probabilities(data, config.perplexity);
    let exaggerated = config.exaggeration_iters.min(config.iters / 4);
    let mut num = vec![0.0; n * n];
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut grad = vec![[0.0f64; 2]; n];
    let mut history = Vec::with_capacity(config.iters);

    for it in 0..config.iters {
        let (exag, momentum) = if it < exaggerated {
            (config.early_exaggeration, 0.5)
        } else {
            (1.0, 0.8)
        };
        let total = kernel(&y, &mut num);
        for i in 0..n {
            let mut g = [0.0, 0.0];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let k = num[i * n + j];
                let coef = (exag * p[i * n + j] - k / total) * k;
                g[0] += coef * (y[i][0] - y[j][0]);
                g[1] += coef * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for d in 0..2 {
                let same_sign = (grad[i][d] > 0.0) == (update[i][d] > 0.0);
                gains[i][d] = if same_sign { gains[i][d] * 0.8 } else { gains[i][d] + 0.2 };
                gains[i][d] = gains[i][d].max(0.01);
                update[i][d] = momentum * update[i][d] - config.learning_rate * gains[i][d] * grad[i][d];
                y[i][d] += update[i][d];
            }
        }
        let mean = y.iter().fold([0.0, 0.0], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
        for v in &mut y {
            v[0] -= mean[0] / n as f64;
            v[1] -= mean[1] / n as f64;
        }
        let total = kernel(&y, &mut num);
        history.push(kl_divergence(&p, &num, total));
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteEmbedding);
    }
    Ok((y, history))
}

/// Dot plot of the projection, scaled to fit a `size`×`size` canvas.
pub fn render_scatter(coords: &[[f64; 2]], size: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(size, size, Rgb([255, 255, 255]));
    if coords.is_empty() || size < 8 {
        return img;
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for c in coords {
        for d in 0..2 {
            lo[d] = lo[d].min(c[d]);
            hi[d] = hi[d].max(c[d]);
        }
    }
    let margin = 4.0;
    let span = (size as f64) - 2.0 * margin;
    for c in coords {
        let px: Vec<i64> = (0..2)
            .map(|d| {
                let range = (hi[d] - lo[d]).max(1e-12);
                (margin + (c[d] - lo[d]) / range * span).round() as i64
            })
            .collect();
        for dy in -2..=2i64 {
            for dx in -2..=2i64 {
                if dx * dx + dy * dy > 4 {
                    continue;
                }
                let (x, y) = (px[0] + dx, size as i64 - 1 - (px[1] + dy));
                if x >= 0 && y >= 0 && x < size as i64 && y < size as i64 {
                    img.put_pixel(x as u32, y as u32, Rgb([200, 30, 30]));
                }
            }
        }
    }
    img
}
