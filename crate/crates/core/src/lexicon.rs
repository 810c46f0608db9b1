//! Closed vocabulary of thing and stuff classes, and the mapping from caption
//! tokens onto it.
//!
//! Label files are line-oriented UTF-8:
//!
//! ```text
//! # comment
//! thing | traffic light | traffic signal, stoplight
//! stuff | sky-other | sky
//! ```
//!
//! Line order defines the 0-based class id. Every label is reachable through
//! its own canonical name; extra synonyms are optional. Names and synonyms are
//! tokenized exactly like captions (see [`tokenize`]), so `sky-other` is the
//! two-token phrase `sky other`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The COCO-Stuff lexicon shipped with the crate (91 things, 91 stuffs).
pub const COCO_STUFF_LABELS: &str = include_str!("../data/cocostuff_labels.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Thing,
    Stuff,
}

impl ClassKind {
    fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "thing" => Ok(ClassKind::Thing),
            "stuff" => Ok(ClassKind::Stuff),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

impl fmt::Display for ClassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassKind::Thing => f.write_str("thing"),
            ClassKind::Stuff => f.write_str("stuff"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassLabel {
    pub id: usize,
    pub name: String,
    pub kind: ClassKind,
    token: String,
}

impl ClassLabel {
    /// Single corpus token for this class: the name's tokens joined by `_`.
    pub fn token(&self) -> &str {
        &self.token
    }
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Candidate singular forms of a token, tried in order: as-is, minus "es",
/// minus "s".
fn plural_variants(token: &str) -> impl Iterator<Item = &str> {
    let es = token
        .strip_suffix("es")
        .filter(|s| !s.is_empty());
    let s = token.strip_suffix('s').filter(|s| !s.is_empty());
    std::iter::once(token).chain(es).chain(s)
}

#[derive(Debug, Clone)]
pub struct ClassLexicon {
    labels: Vec<ClassLabel>,
    synonyms: BTreeMap<Vec<String>, usize>,
    by_token: BTreeMap<String, usize>,
    max_phrase: usize,
}

/// One label entry before ids are assigned.
#[derive(Debug, Clone)]
pub struct LabelSpec {
    pub name: String,
    pub kind: ClassKind,
    pub synonyms: Vec<String>,
}

impl LabelSpec {
    pub fn new(name: &str, kind: ClassKind) -> Self {
        LabelSpec {
            name: name.to_string(),
            kind,
            synonyms: Vec::new(),
        }
    }

    pub fn with_synonyms(mut self, synonyms: &[&str]) -> Self {
        self.synonyms = synonyms.iter().map(|s| s.to_string()).collect();
        self
    }
}

impl ClassLexicon {
    pub fn new(specs: Vec<LabelSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::EmptyLexicon);
        }
        let mut labels: Vec<ClassLabel> = Vec::with_capacity(specs.len());
        let mut synonyms: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        let mut by_token = BTreeMap::new();
        let mut names = BTreeMap::new();

        for (id, spec) in specs.into_iter().enumerate() {
            let name = spec.name.trim().to_string();
            let canonical = tokenize(&name);
            if canonical.is_empty() {
                return Err(Error::EmptyLabelName(name));
            }
            if names.insert(name.to_lowercase(), id).is_some() {
                return Err(Error::DuplicateLabel(name));
            }
            let token = canonical.join("_");
            if by_token.insert(token.clone(), id).is_some() {
                return Err(Error::DuplicateLabel(name));
            }

            let phrases = std::iter::once(canonical)
                .chain(spec.synonyms.iter().map(|s| tokenize(s)))
                .filter(|p| !p.is_empty());
            for phrase in phrases {
                match synonyms.get(&phrase) {
                    Some(&other) if other == id => {}
                    Some(&other) => {
                        return Err(Error::DuplicateSynonym {
                            synonym: phrase.join(" "),
                            first: labels[other].name.clone(),
                            second: name.clone(),
                        })
                    }
                    None => {
                        synonyms.insert(phrase, id);
                    }
                }
            }
            labels.push(ClassLabel {
                id,
                name,
                kind: spec.kind,
                token,
            });
        }

        let max_phrase = synonyms.keys().map(Vec::len).max().unwrap_or(1);
        Ok(ClassLexicon {
            labels,
            synonyms,
            by_token,
            max_phrase,
        })
    }

    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut specs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.splitn(3, '|');
            let kind = fields.next().unwrap_or_default();
            let name = fields
                .next()
                .map(str::trim)
                .filter(|n| !n.is_empty())
                .ok_or_else(|| Error::parse(context, lineno + 1, "expected `kind | name [| synonyms]`"))?;
            let kind = ClassKind::parse(kind)?;
            let synonyms = fields
                .next()
                .map(|s| {
                    s.split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect()
                })
                .unwrap_or_default();
            specs.push(LabelSpec {
                name: name.to_string(),
                kind,
                synonyms,
            });
        }
        Self::new(specs)
    }

    pub fn coco_stuff() -> Self {
        Self::parse(COCO_STUFF_LABELS, "builtin COCO-Stuff labels")
            .expect("bundled label file is well-formed")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn label(&self, id: usize) -> Option<&ClassLabel> {
        self.labels.get(id)
    }

    pub fn kind(&self, id: usize) -> Option<ClassKind> {
        self.labels.get(id).map(|l| l.kind)
    }

    pub fn id_by_name(&self, name: &str) -> Option<usize> {
        let lower = name.trim().to_lowercase();
        self.labels
            .iter()
            .find(|l| l.name.to_lowercase() == lower)
            .map(|l| l.id)
            .or_else(|| self.id_by_token(&lower))
    }

    /// Looks up a class by its corpus token (`traffic_light`).
    pub fn id_by_token(&self, token: &str) -> Option<usize> {
        self.by_token.get(token).copied()
    }

    pub fn count(&self, kind: ClassKind) -> usize {
        self.labels.iter().filter(|l| l.kind == kind).count()
    }

    /// Maps lowercased caption tokens to class ids, dropping everything that
    /// is not a class mention. Longer phrases win over shorter ones starting
    /// at the same position; within one phrase length the exact form is
    /// tried before the plural-stripped forms of its last token.
    pub fn match_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut i = 0;
        'outer: while i < tokens.len() {
            let longest = self.max_phrase.min(tokens.len() - i);
            for len in (1..=longest).rev() {
                let span = &tokens[i..i + len];
                let (head, last) = span.split_at(len - 1);
                let mut key: Vec<String> = head.iter().map(|t| t.as_ref().to_string()).collect();
                for variant in plural_variants(last[0].as_ref()) {
                    key.push(variant.to_string());
                    if let Some(&id) = self.synonyms.get(&key) {
                        out.push(id);
                        i += len;
                        continue 'outer;
                    }
                    key.pop();
                }
            }
            i += 1;
        }
        out
    }

    /// Convenience: tokenize free text and match it.
    pub fn match_text(&self, text: &str) -> Vec<usize> {
        self.match_tokens(&tokenize(text))
    }
}

pub fn load_lexicon(path: &Path) -> Result<ClassLexicon> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ClassLexicon::parse(&text, &path.display().to_string())
}
