//! Count-based relation ground truth and its correlation with embedding
//! similarity.
//!
//! `R_ab = n(a ∩ b) / n(a ∪ b)`: the number of images containing both classes
//! over the number containing either. Pairs that never occur are excluded
//! from the correlation rather than imputed.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::embedding::{cosine_similarity, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::relation::SceneContext;

/// Pairwise image counts over a fixed label list.
///
/// Only per-class counts and pairwise intersections are stored; unions follow
/// from inclusion-exclusion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceStats {
    labels: Vec<String>,
    image_total: u64,
    intersections: Vec<u64>,
}

impl CooccurrenceStats {
    pub fn empty(labels: Vec<String>) -> Self {
        let n = labels.len();
        CooccurrenceStats {
            labels,
            image_total: 0,
            intersections: vec![0; n * n],
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn image_total(&self) -> u64 {
        self.image_total
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Adds one image containing `classes` (indices into `labels`).
    pub fn add_image(&mut self, classes: &BTreeSet<usize>) {
        let n = self.labels.len();
        self.image_total += 1;
        for &a in classes {
            for &b in classes {
                self.intersections[a * n + b] += 1;
            }
        }
    }

    /// Sums two tables over the same label list.
    pub fn merge(mut self, other: &CooccurrenceStats) -> Self {
        assert_eq!(self.labels, other.labels, "merging tables with different labels");
        self.image_total += other.image_total;
        for (a, b) in self.intersections.iter_mut().zip(&other.intersections) {
            *a += b;
        }
        self
    }

    pub fn occurrences(&self, a: usize) -> u64 {
        self.intersections[a * self.labels.len() + a]
    }

    pub fn intersection(&self, a: usize, b: usize) -> u64 {
        self.intersections[a * self.labels.len() + b]
    }

    pub fn union(&self, a: usize, b: usize) -> u64 {
        self.occurrences(a) + self.occurrences(b) - self.intersection(a, b)
    }

    /// Sparse text table: an `image_total` line, then `a b n_and n_or` for
    /// every pair `a <= b` with a non-zero intersection (the diagonal carries
    /// per-class counts).
    pub fn to_text(&self) -> String {
        let n = self.labels.len();
        let mut out = format!("image_total {}\n", self.image_total);
        for a in 0..n {
            for b in a..n {
                let inter = self.intersection(a, b);
                if inter > 0 {
                    let _ = writeln!(out, "{} {} {} {}", self.labels[a], self.labels[b], inter, self.union(a, b));
                }
            }
        }
        out
    }

    /// Parses [`CooccurrenceStats::to_text`] output. Labels are taken from the
    /// table, ordered by first appearance.
    pub fn from_text(text: &str) -> Result<Self> {
        let ctx = "co-occurrence table";
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(ctx, 1, "missing header"))?;
        let image_total = header
            .strip_prefix("image_total ")
            .and_then(|v| v.trim().parse::<u64>().ok())
            .ok_or_else(|| Error::parse(ctx, 1, "expected `image_total <count>`"))?;
        let mut rows = Vec::new();
        let mut labels: Vec<String> = Vec::new();
        for (i, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(Error::parse(ctx, i + 1, "expected `a b n_and n_or`"));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|_| Error::parse(ctx, i + 1, format!("bad count `{s}`")));
            let (inter, union) = (num(f[2])?, num(f[3])?);
            for l in &f[..2] {
                if !labels.iter().any(|x| x == l) {
                    labels.push(l.to_string());
                }
            }
            rows.push((i + 1, f[0].to_string(), f[1].to_string(), inter, union));
        }
        let mut stats = CooccurrenceStats::empty(labels);
        stats.image_total = image_total;
        let n = stats.labels.len();
        for (_, a, b, inter, _) in &rows {
            let (ia, ib) = (stats.index_of(a).unwrap(), stats.index_of(b).unwrap());
            stats.intersections[ia * n + ib] = *inter;
            stats.intersections[ib * n + ia] = *inter;
        }
        for (line, a, b, inter, union) in &rows {
            let (ia, ib) = (stats.index_of(a).unwrap(), stats.index_of(b).unwrap());
            if *inter > stats.occurrences(ia).min(stats.occurrences(ib))
                || stats.union(ia, ib) != *union || inter > union || *union > image_total {
                return Err(Error::parse(ctx, *line, "counts are inconsistent"));
            }
        }
        Ok(stats)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Counts, for every label pair, the scenes containing both and either.
/// Presence is membership in the scene's things or stuffs; `labels` maps
/// lexicon ids to the names stored in the table.
pub fn count_cooccurrence(scenes: &[SceneContext], labels: Vec<String>) -> CooccurrenceStats {
    let mut stats = CooccurrenceStats::empty(labels);
    for scene in scenes {
        stats.add_image(&scene.classes());
    }
    stats
}

pub fn relation_count(stats: &CooccurrenceStats, a: usize, b: usize) -> Result<f64> {
    let union = stats.union(a, b);
    if union == 0 {
        return Err(Error::EmptyUnion(stats.labels[a].clone(), stats.labels[b].clone()));
    }
    Ok(stats.intersection(a, b) as f64 / union as f64)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::TooFewSamples(xs.len()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // deviations below rounding noise of the mean count as constant input
    let floor = |v: &[f64]| {
        let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        n * (16.0 * f64::EPSILON * scale).powi(2)
    };
    if sxx <= floor(xs) || syy <= floor(ys) {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationPoint {
    pub a: String,
    pub b: String,
    pub cosine: f64,
    pub relation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlation {
    pub coefficient: f64,
    pub pair_count: usize,
    pub points: Vec<RelationPoint>,
}

impl Correlation {
    /// Tab-separated scatter data with a header row.
    pub fn scatter_tsv(&self) -> String {
        let mut out = String::from("a\tb\tcosine\trelation\n");
        for p in &self.points {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", p.a, p.b, p.cosine, p.relation);
        }
        out
    }
}

/// Pearson correlation between `cos(v_a, v_b)` and `R_ab` over every
/// unordered pair of distinct classes that occur in the data. Raw cosines are
/// used; the normalized form is an affine map and leaves the coefficient
/// unchanged.
pub fn correlate_relations(emb: &EmbeddingMatrix, stats: &CooccurrenceStats) -> Result<Correlation> {
    let n = stats.labels.len();
    let mut points = Vec::new();
    for a in 0..n {
        if stats.occurrences(a) == 0 {
            continue;
        }
        let va = emb
            .vector(&stats.labels[a])
            .ok_or_else(|| Error::UnknownToken(stats.labels[a].clone()))?;
        for b in a + 1..n {
            if stats.occurrences(b) == 0 {
                continue;
            }
            let vb = emb
                .vector(&stats.labels[b])
                .ok_or_else(|| Error::UnknownToken(stats.labels[b].clone()))?;
            points.push(RelationPoint {
                a: stats.labels[a].clone(),
                b: stats.labels[b].clone(),
                cosine: cosine_similarity(va, vb)?,
                relation: relation_count(stats, a, b)?,
            });
        }
    }
    if points.len() < 2 {
        return Err(Error::TooFewSamples(points.len()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.cosine).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.relation).collect();
    Ok(Correlation {
        coefficient: pearson(&xs, &ys)?,
        pair_count: points.len(),
        points,
    })
}
