//! Class-label embeddings: training, similarity queries, 2-D projection and
//! the word-vector text format.
//!
//! The text format is the usual one: a `<vocab_size> <dim>` header, then one
//! line per token holding the token and `dim` decimal reals. Values are
//! written in shortest round-trip form, so save/load is lossless.

mod sgns;
mod tsne;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub use sgns::{sgns_loss_and_grad, train, SgnsGradient, TrainConfig};
pub use tsne::{project_tsne, render_scatter, tsne, TsneConfig, TsneProjection};

/// Dense row-major embedding table. Queries use the center vectors only.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    vectors: Vec<f64>,
    context_vectors: Option<Vec<f64>>,
}

impl EmbeddingMatrix {
    pub fn new(vocab: Vec<String>, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        Self::build(vocab, dim, vectors, None)
    }

    pub fn with_context(vocab: Vec<String>, dim: usize, vectors: Vec<f64>, context: Vec<f64>) -> Result<Self> {
        Self::build(vocab, dim, vectors, Some(context))
    }

    /// Convenience for hand-built tables: one `(token, vector)` per row.
    pub fn from_rows<S: Into<String>>(rows: Vec<(S, Vec<f64>)>) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.1.len());
        let mut vocab = Vec::with_capacity(rows.len());
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        for (tok, v) in rows {
            if v.len() != dim {
                return Err(Error::DimensionMismatch(dim, v.len()));
            }
            vocab.push(tok.into());
            vectors.extend(v);
        }
        Self::new(vocab, dim, vectors)
    }

    fn build(vocab: Vec<String>, dim: usize, vectors: Vec<f64>, context: Option<Vec<f64>>) -> Result<Self> {
        if vectors.len() != vocab.len() * dim {
            return Err(Error::DimensionMismatch(vocab.len() * dim, vectors.len()));
        }
        if let Some(ctx) = &context {
            if ctx.len() != vectors.len() {
                return Err(Error::DimensionMismatch(vectors.len(), ctx.len()));
            }
        }
        if vectors.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteEmbedding);
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, tok) in vocab.iter().enumerate() {
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::DuplicateLabel(tok.clone()));
            }
        }
        Ok(EmbeddingMatrix {
            vocab,
            index,
            dim,
            vectors,
            context_vectors: context,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.index_of(token).map(|i| self.row(i))
    }

    pub fn context_vectors(&self) -> Option<&[f64]> {
        self.context_vectors.as_deref()
    }

    /// Every vector multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.vocab.clone(),
            self.dim,
            self.vectors.iter().map(|x| x * factor).collect(),
        )
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.vocab.len(), self.dim);
        for (i, tok) in self.vocab.iter().enumerate() {
            out.push_str(tok);
            for x in self.row(i) {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let ctx = "embedding file";
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(ctx, 1, "missing header"))?;
        let mut h = header.split_whitespace().map(str::parse::<usize>);
        let (n, dim) = match (h.next(), h.next(), h.next()) {
            (Some(Ok(n)), Some(Ok(d)), None) => (n, d),
            _ => return Err(Error::parse(ctx, 1, "header must be `<vocab_size> <dim>`")),
        };
        let mut vocab = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n * dim);
        for (lineno, line) in lines {
            let mut fields = line.split_whitespace();
            let tok = fields.next().expect("line is non-empty");
            let before = vectors.len();
            for f in fields {
                let x: f64 = f
                    .parse()
                    .map_err(|_| Error::parse(ctx, lineno + 1, format!("bad number `{f}`")))?;
                vectors.push(x);
            }
            if vectors.len() - before != dim {
                return Err(Error::parse(
                    ctx,
                    lineno + 1,
                    format!("expected {dim} values, found {}", vectors.len() - before),
                ));
            }
            vocab.push(tok.to_string());
        }
        if vocab.len() != n {
            return Err(Error::parse(ctx, 1, format!("header promises {n} rows, found {}", vocab.len())));
        }
        Self::new(vocab, dim, vectors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// `u·v / (|u||v|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(u.len(), v.len()));
    }
    let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((uv / (uu * vv).sqrt()).clamp(-1.0, 1.0))
}

/// Top-`k` tokens by cosine similarity to `token`, excluding itself. Ties keep
/// vocabulary order.
pub fn nearest_neighbors(emb: &EmbeddingMatrix, token: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let q = emb.index_of(token).ok_or_else(|| Error::UnknownToken(token.to_string()))?;
    if k < 1 || k >= emb.len() {
        return Err(Error::InvalidNeighborCount { k, vocab: emb.len() });
    }
    let query = emb.row(q);
    let mut scored = Vec::with_capacity(emb.len() - 1);
    for (i, tok) in emb.vocab().iter().enumerate() {
        if i != q {
            scored.push((tok.clone(), cosine_similarity(query, emb.row(i))?));
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored.truncate(k);
    Ok(scored)
}
