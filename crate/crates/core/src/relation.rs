//! Relation scores of thing classes against their image context, and the
//! occlusion verdicts derived from them.
//!
//! For a thing `i` in scene `k` the score is the mean cosine similarity
//! between its vector and the vectors of every other class present:
//!
//! ```text
//! d_i = 1/|C| · Σ_{j ∈ C} cos(v_i, v_j),    C = (S_k ∪ T_k) \ {i}
//! ```
//!
//! A thing is removed when `(d_i + 1) / 2` is strictly below the similarity
//! threshold. A thing with nothing else in the scene has no context and is
//! always kept.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_similarity, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::lexicon::{ClassKind, ClassLexicon};
use crate::mask::BinaryMask;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneContext {
    pub image_id: String,
    pub things: BTreeSet<usize>,
    pub stuffs: BTreeSet<usize>,
    pub thing_masks: BTreeMap<usize, BinaryMask>,
}

impl SceneContext {
    pub fn new(
        image_id: impl Into<String>,
        things: BTreeSet<usize>,
        stuffs: BTreeSet<usize>,
        thing_masks: BTreeMap<usize, BinaryMask>,
    ) -> Result<Self> {
        let scene = SceneContext {
            image_id: image_id.into(),
            things,
            stuffs,
            thing_masks,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// A scene without pixel masks, e.g. for scoring or counting only.
    pub fn from_sets(image_id: impl Into<String>, things: &[usize], stuffs: &[usize]) -> Result<Self> {
        Self::new(
            image_id,
            things.iter().copied().collect(),
            stuffs.iter().copied().collect(),
            BTreeMap::new(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(id) = self.things.intersection(&self.stuffs).next() {
            return Err(Error::InvalidScene(format!("class {id} is both thing and stuff")));
        }
        let mut dims = None;
        for (id, mask) in &self.thing_masks {
            if !self.things.contains(id) {
                return Err(Error::InvalidScene(format!("mask for class {id} which is not a thing here")));
            }
            if mask.is_empty() {
                return Err(Error::InvalidScene(format!("mask for class {id} is empty")));
            }
            match dims {
                None => dims = Some(mask.dims()),
                Some(d) if d != mask.dims() => {
                    return Err(Error::MaskSize {
                        expected: d,
                        got: mask.dims(),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// Checks the thing/stuff split against the lexicon kinds.
    pub fn check_kinds(&self, lexicon: &ClassLexicon) -> Result<()> {
        for (set, kind) in [(&self.things, ClassKind::Thing), (&self.stuffs, ClassKind::Stuff)] {
            for &id in set {
                match lexicon.kind(id) {
                    Some(k) if k == kind => {}
                    Some(k) => return Err(Error::InvalidScene(format!("class {id} is a {k}, listed as {kind}"))),
                    None => return Err(Error::UnknownClass(id.to_string())),
                }
            }
        }
        Ok(())
    }

    /// Every class in the scene, things and stuffs.
    pub fn classes(&self) -> BTreeSet<usize> {
        self.things.union(&self.stuffs).copied().collect()
    }

    /// `|(S ∪ T) \ {i}|` for a thing `i` of this scene.
    pub fn context_size(&self) -> usize {
        (self.things.len() + self.stuffs.len()).saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub similarity_threshold: f64,
    pub min_area_fraction: f64,
    pub dilation_radius: u32,
    /// Drop small masks before dilating the survivors (otherwise dilate first).
    pub filter_before_dilation: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            similarity_threshold: 0.4,
            min_area_fraction: 0.02,
            dilation_radius: 5,
            filter_before_dilation: true,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.similarity_threshold) {
            return Err(Error::InvalidDetectorConfig("similarity_threshold must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.min_area_fraction) {
            return Err(Error::InvalidDetectorConfig("min_area_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Keep,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionEntry {
    pub class_id: usize,
    pub class_name: String,
    /// Mean cosine similarity to the context; `None` without context.
    pub raw_score: Option<f64>,
    pub normalized_score: Option<f64>,
    pub verdict: Verdict,
    pub context_size: usize,
    pub no_context: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionReport {
    pub image_id: String,
    pub entries: Vec<OcclusionEntry>,
}

impl OcclusionReport {
    pub fn removed(&self) -> impl Iterator<Item = &OcclusionEntry> {
        self.entries.iter().filter(|e| e.verdict == Verdict::Remove)
    }
}

fn class_vector<'a>(emb: &'a EmbeddingMatrix, lexicon: &ClassLexicon, id: usize) -> Result<&'a [f64]> {
    let label = lexicon.label(id).ok_or_else(|| Error::UnknownClass(id.to_string()))?;
    emb.vector(label.token())
        .ok_or_else(|| Error::UnknownToken(label.token().to_string()))
}

/// Mean cosine similarity of thing `thing` to every other class in the
/// scene. `Ok(None)` when the thing is alone.
pub fn relation_score(
    emb: &EmbeddingMatrix,
    lexicon: &ClassLexicon,
    scene: &SceneContext,
    thing: usize,
) -> Result<Option<f64>> {
    if !scene.things.contains(&thing) {
        return Err(Error::NotAThing(thing));
    }
    let vi = class_vector(emb, lexicon, thing)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in scene.things.iter().chain(&scene.stuffs).copied().filter(|&j| j != thing) {
        sum += cosine_similarity(vi, class_vector(emb, lexicon, j)?)?;
        count += 1;
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// Normalized score in `[0, 1]`.
pub fn normalize_score(raw: f64) -> f64 {
    (raw + 1.0) / 2.0
}

/// Remove iff the normalized score is strictly below `threshold` and the
/// thing has context.
pub fn decide(normalized: Option<f64>, context_size: usize, threshold: f64) -> Verdict {
    match normalized {
        Some(s) if s < threshold && context_size > 0 => Verdict::Remove,
        _ => Verdict::Keep,
    }
}

pub fn detect_occlusions(
    emb: &EmbeddingMatrix,
    lexicon: &ClassLexicon,
    scene: &SceneContext,
    cfg: &DetectorConfig,
) -> Result<OcclusionReport> {
    cfg.validate()?;
    let mut entries = Vec::with_capacity(scene.things.len());
    for &thing in &scene.things {
        let raw = relation_score(emb, lexicon, scene, thing)?;
        let normalized = raw.map(normalize_score);
        let context_size = scene.context_size();
        let verdict = decide(normalized, context_size, cfg.similarity_threshold);
        entries.push(OcclusionEntry {
            class_id: thing,
            class_name: lexicon.label(thing).map(|l| l.name.clone()).unwrap_or_default(),
            raw_score: raw,
            normalized_score: normalized,
            verdict,
            context_size,
            no_context: raw.is_none(),
        });
    }
    Ok(OcclusionReport {
        image_id: scene.image_id.clone(),
        entries,
    })
}
