//! Caption corpus construction and skip-gram pair generation.
//!
//! One document per image: the concatenation of that image's tokenized
//! captions. In [`CorpusMode::Modified`] every caption is first reduced to the
//! class mentions it contains, each written as the class's corpus token.
//!
//! Pairs never cross documents. [`BoundaryMode::HardBoundary`] enforces that by
//! windowing each document separately; [`BoundaryMode::LiteralEop`] flattens
//! the corpus with `window` end-of-paragraph markers between documents and
//! throws away any pair touching a marker. Both yield the same multiset.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{tokenize, ClassLexicon};

pub const EOP_TOKEN: &str = "<eop>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionSet {
    pub image_id: u64,
    pub captions: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusMode {
    Original,
    Modified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    #[default]
    HardBoundary,
    LiteralEop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Vec<String>>,
    pub mode: CorpusMode,
    pub eop_token: String,
}

#[derive(Deserialize)]
struct CaptionRecord {
    image_id: u64,
    caption: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CaptionFile {
    Bare(Vec<CaptionRecord>),
    Coco { annotations: Vec<CaptionRecord> },
}

/// Parses COCO-style caption annotations, either the full annotation file
/// (`{"annotations": [...]}`) or a bare array of `{image_id, caption}`.
/// Caption sets come back ordered by image id; captions keep file order.
pub fn parse_captions(json: &str) -> Result<Vec<CaptionSet>> {
    let file: CaptionFile = serde_json::from_str(json).map_err(|source| Error::Json {
        context: "caption annotations".into(),
        source,
    })?;
    let records = match file {
        CaptionFile::Bare(r) | CaptionFile::Coco { annotations: r } => r,
    };
    let mut grouped: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    for rec in records {
        grouped.entry(rec.image_id).or_default().push(rec.caption);
    }
    Ok(grouped
        .into_iter()
        .map(|(image_id, captions)| CaptionSet { image_id, captions })
        .collect())
}

pub fn load_captions(path: &Path) -> Result<Vec<CaptionSet>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_captions(&text)
}

pub fn build_corpus(captions: &[CaptionSet], lexicon: &ClassLexicon, mode: CorpusMode) -> Result<Corpus> {
    let mut seen = std::collections::HashSet::with_capacity(captions.len());
    let mut documents = Vec::with_capacity(captions.len());
    for set in captions {
        if !seen.insert(set.image_id) {
            return Err(Error::DuplicateImage(set.image_id));
        }
        if set.captions.is_empty() {
            return Err(Error::EmptyCaptions(set.image_id));
        }
        let mut doc = Vec::new();
        for caption in &set.captions {
            let tokens = tokenize(caption);
            match mode {
                CorpusMode::Original => doc.extend(tokens),
                CorpusMode::Modified => doc.extend(
                    lexicon
                        .match_tokens(&tokens)
                        .into_iter()
                        .map(|id| lexicon.labels()[id].token().to_string()),
                ),
            }
        }
        documents.push(doc);
    }
    Ok(Corpus {
        documents,
        mode,
        eop_token: EOP_TOKEN.to_string(),
    })
}

impl Corpus {
    pub fn new(documents: Vec<Vec<String>>, mode: CorpusMode) -> Self {
        Corpus {
            documents,
            mode,
            eop_token: EOP_TOKEN.to_string(),
        }
    }

    /// One whitespace-joined document per line; empty documents are empty lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            out.push_str(&doc.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, mode: CorpusMode) -> Result<Self> {
        let mut documents = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let doc: Vec<String> = line.split_whitespace().map(String::from).collect();
            if doc.iter().any(|t| t == EOP_TOKEN) {
                return Err(Error::parse("corpus", i + 1, "reserved end-of-paragraph token inside a document"));
            }
            documents.push(doc);
        }
        Ok(Corpus::new(documents, mode))
    }

    /// Flat token stream with `window` end-of-paragraph markers after every
    /// document.
    pub fn flatten(&self, window: usize) -> Vec<&str> {
        let mut out = Vec::new();
        for doc in &self.documents {
            out.extend(doc.iter().map(String::as_str));
            out.extend(std::iter::repeat_n(self.eop_token.as_str(), window));
        }
        out
    }

    pub fn token_count(&self) -> usize {
        self.documents.iter().map(Vec::len).sum()
    }
}

/// Token ↔ index table in order of first appearance, with corpus counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
}

impl Vocab {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut vocab = Vocab::default();
        for token in corpus.documents.iter().flatten() {
            let id = match vocab.index.get(token) {
                Some(&id) => id,
                None => {
                    vocab.index.insert(token.clone(), vocab.tokens.len());
                    vocab.tokens.push(token.clone());
                    vocab.counts.push(0);
                    vocab.tokens.len() - 1
                }
            };
            vocab.counts[id] += 1;
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn encode(&self, corpus: &Corpus) -> Vec<Vec<usize>> {
        corpus
            .documents
            .iter()
            .map(|doc| doc.iter().filter_map(|t| self.get(t)).collect())
            .collect()
    }
}

/// Iterator over skip-gram `(center, context)` pairs.
pub struct Pairs<'a> {
    window: usize,
    source: PairSource<'a>,
    pos: usize,
    slot: usize,
}

enum PairSource<'a> {
    Hard { docs: &'a [Vec<usize>], doc: usize },
    Literal { stream: Vec<Option<usize>> },
}

/// Enumerates `(center, context)` pairs with `1 <= |offset| <= window`.
/// For each center, contexts come left to right.
pub fn generate_pairs(docs: &[Vec<usize>], window: usize, mode: BoundaryMode) -> Result<Pairs<'_>> {
    if window < 1 {
        return Err(Error::InvalidWindow);
    }
    let source = match mode {
        BoundaryMode::HardBoundary => PairSource::Hard { docs, doc: 0 },
        BoundaryMode::LiteralEop => {
            let mut stream = Vec::new();
            for doc in docs {
                stream.extend(doc.iter().map(|&t| Some(t)));
                stream.extend(std::iter::repeat_n(None, window));
            }
            PairSource::Literal { stream }
        }
    };
    Ok(Pairs {
        window,
        source,
        pos: 0,
        slot: 0,
    })
}

impl Pairs<'_> {
    fn offset(&self) -> isize {
        let w = self.window as isize;
        let s = self.slot as isize;
        if s < w {
            s - w
        } else {
            s - w + 1
        }
    }

    fn advance(&mut self) {
        self.slot += 1;
        if self.slot == 2 * self.window {
            self.slot = 0;
            self.pos += 1;
        }
    }
}

impl Iterator for Pairs<'_> {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let offset = self.offset();
            match &mut self.source {
                PairSource::Hard { docs, doc } => {
                    let current = docs.get(*doc)?;
                    if self.pos >= current.len() {
                        *doc += 1;
                        self.pos = 0;
                        self.slot = 0;
                        continue;
                    }
                    let ctx = self.pos as isize + offset;
                    let pair = (ctx >= 0 && (ctx as usize) < current.len())
                        .then(|| (current[self.pos], current[ctx as usize]));
                    self.advance();
                    if pair.is_some() {
                        return pair;
                    }
                }
                PairSource::Literal { stream } => {
                    if self.pos >= stream.len() {
                        return None;
                    }
                    let ctx = self.pos as isize + offset;
                    let pair = if ctx >= 0 && (ctx as usize) < stream.len() {
                        // pairs touching a marker are produced and dropped here
                        match (stream[self.pos], stream[ctx as usize]) {
                            (Some(c), Some(o)) => Some((c, o)),
                            _ => None,
                        }
                    } else {
                        None
                    };
                    self.advance();
                    if pair.is_some() {
                        return pair;
                    }
                }
            }
        }
    }
}
