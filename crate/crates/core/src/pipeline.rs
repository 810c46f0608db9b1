//! End-to-end orchestration: label maps in, cleaned images and a run
//! manifest out.
//!
//! Segmentation is not run here. Each image `<id>.png|jpg` in the image
//! directory is paired with an 8-bit label map `<id>.png` in the label
//! directory whose pixel values are lexicon ids (255 = unlabeled). Things and
//! stuffs are partitioned by lexicon kind; a per-image sidecar
//! `<stuff_overrides>/<id>.txt` listing stuff class names replaces the stuff
//! set when present.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_corpus, load_captions, CorpusMode};
use crate::embedding::{train, EmbeddingMatrix, TrainConfig};
use crate::error::{Error, Result};
use crate::inpaint::{inpaint, FloatImage, InpaintConfig};
use crate::lexicon::{load_lexicon, ClassKind, ClassLexicon};
use crate::mask::{dilate, filter_small, masks_from_labelmap, merge_occlusion_mask, BinaryMask, LabelMap};
use crate::relation::{detect_occlusions, DetectorConfig, OcclusionReport, SceneContext};

pub const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

pub fn tool_version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub images: PathBuf,
    pub labels: PathBuf,
    pub output: PathBuf,
    /// Trained vectors. If the file does not exist and `captions` is set, the
    /// embedding is trained from the modified corpus and written here.
    pub embedding: PathBuf,
    /// Label list; the bundled COCO-Stuff list when absent.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub captions: Option<PathBuf>,
    #[serde(default)]
    pub stuff_overrides: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Also write the merged removal mask of every image.
    pub write_masks: bool,
    /// Also write an input | output side-by-side image.
    pub write_composites: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            write_masks: true,
            write_composites: false,
        }
    }
}

/// Run configuration, read from TOML. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub paths: PathsConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub inpaint: InpaintConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seed() -> u64 {
    7
}

impl PipelineConfig {
    pub fn new(paths: PathsConfig) -> Self {
        PipelineConfig {
            seed: default_seed(),
            paths,
            detector: DetectorConfig::default(),
            inpaint: InpaintConfig::default(),
            train: TrainConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        fix(&mut p.images);
        fix(&mut p.labels);
        fix(&mut p.output);
        fix(&mut p.embedding);
        for path in [&mut p.lexicon, &mut p.captions, &mut p.stuff_overrides].into_iter().flatten() {
            fix(path);
        }
    }

    /// Checks config values and that every referenced input exists.
    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.inpaint.validate()?;
        let p = &self.paths;
        let need_dir = |path: &Path, what: &str| {
            if path.is_dir() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{what} directory {} does not exist", path.display())))
            }
        };
        need_dir(&p.images, "image")?;
        need_dir(&p.labels, "label map")?;
        if let Some(dir) = &p.stuff_overrides {
            need_dir(dir, "stuff override")?;
        }
        if let Some(lex) = &p.lexicon {
            if !lex.is_file() {
                return Err(Error::InvalidConfig(format!("lexicon {} does not exist", lex.display())));
            }
        }
        if !p.embedding.is_file() {
            match &p.captions {
                Some(c) if c.is_file() => self.train.validate()?,
                Some(c) => {
                    return Err(Error::InvalidConfig(format!("captions file {} does not exist", c.display())));
                }
                None => {
                    return Err(Error::InvalidConfig(format!(
                        "embedding {} does not exist and no captions are configured to train it",
                        p.embedding.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskStats {
    /// Classes with a Remove verdict whose mask went into the merged mask.
    pub removed: Vec<String>,
    /// Remove verdicts without a surviving mask; left in place.
    pub unmasked: Vec<String>,
    pub area: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
    pub inpaint_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub things: Vec<String>,
    pub stuffs: Vec<String>,
    /// Things dropped by the small-area filter.
    pub filtered_out: Vec<String>,
    pub report: Option<OcclusionReport>,
    pub mask: Option<MaskStats>,
    /// Relative to the output directory.
    pub output: Option<String>,
    pub passthrough: bool,
    pub error: Option<RecordError>,
    pub timings: Timings,
}

impl ImageRecord {
    fn failed(image_id: String, err: &Error) -> Self {
        ImageRecord {
            image_id,
            things: Vec::new(),
            stuffs: Vec::new(),
            filtered_out: Vec::new(),
            report: None,
            mask: None,
            output: None,
            passthrough: false,
            error: Some(RecordError {
                code: err.code().to_string(),
                message: err.to_string(),
            }),
            timings: Timings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: PipelineConfig,
    pub records: Vec<ImageRecord>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Json {
            context: "run manifest".into(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Copy with every timing zeroed, for comparing runs.
    pub fn without_timings(&self) -> Self {
        let mut m = self.clone();
        for r in &mut m.records {
            r.timings = Timings::default();
        }
        m
    }

    pub fn record(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(|r| r.error.is_some())
    }
}

/// Collects records from concurrent workers. Records can only be added; the
/// finished list is ordered by image id whatever the arrival order.
#[derive(Debug, Default)]
pub struct ManifestWriter {
    records: Mutex<Vec<ImageRecord>>,
}

impl ManifestWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&self, record: ImageRecord) {
        self.records.lock().expect("manifest lock poisoned").push(record);
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("manifest lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn finish(self) -> Vec<ImageRecord> {
        let mut records = self.records.into_inner().expect("manifest lock poisoned");
        records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        records
    }
}

/// Everything the detector derives from one label map.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneAnalysis {
    pub scene: SceneContext,
    /// Dilated masks of the things that survived the area filter.
    pub masks: BTreeMap<usize, BinaryMask>,
    pub filtered_out: Vec<usize>,
}

/// Builds the scene of one label map: per-thing masks, area filter and
/// dilation (in the configured order), and the stuff set.
pub fn analyze_label_map(
    image_id: &str,
    map: &LabelMap,
    lexicon: &ClassLexicon,
    stuff_override: Option<&BTreeSet<usize>>,
    cfg: &DetectorConfig,
) -> Result<SceneAnalysis> {
    cfg.validate()?;
    let found = masks_from_labelmap(map, lexicon)?;
    let masks: BTreeMap<usize, BinaryMask> = if cfg.filter_before_dilation {
        filter_small(&found.things, cfg.min_area_fraction)
            .into_iter()
            .map(|(id, m)| (id, dilate(&m, cfg.dilation_radius)))
            .collect()
    } else {
        let dilated: BTreeMap<usize, BinaryMask> = found
            .things
            .iter()
            .map(|(&id, m)| (id, dilate(m, cfg.dilation_radius)))
            .collect();
        filter_small(&dilated, cfg.min_area_fraction)
    };
    let filtered_out = found.things.keys().filter(|id| !masks.contains_key(id)).copied().collect();
    let stuffs = stuff_override.cloned().unwrap_or(found.stuffs);
    let scene = SceneContext::new(image_id, masks.keys().copied().collect(), stuffs, masks.clone())?;
    scene.check_kinds(lexicon)?;
    Ok(SceneAnalysis {
        scene,
        masks,
        filtered_out,
    })
}

/// Parses a stuff sidecar: class names separated by newlines or commas,
/// `#` starts a comment.
pub fn parse_stuff_list(text: &str, lexicon: &ClassLexicon) -> Result<BTreeSet<usize>> {
    let mut out = BTreeSet::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        for name in line.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let id = lexicon.id_by_name(name).ok_or_else(|| Error::UnknownClass(name.to_string()))?;
            if lexicon.kind(id) != Some(ClassKind::Stuff) {
                return Err(Error::InvalidScene(format!("`{name}` in a stuff list is not a stuff class")));
            }
            out.insert(id);
        }
    }
    Ok(out)
}

fn read_stuff_override(dir: Option<&Path>, image_id: &str, lexicon: &ClassLexicon) -> Result<Option<BTreeSet<usize>>> {
    let Some(dir) = dir else { return Ok(None) };
    let path = dir.join(format!("{image_id}.txt"));
    if !path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_stuff_list(&text, lexicon).map(Some)
}

/// Image files in `dir` with a supported extension, sorted by path.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ok = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if ok && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn image_id_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn names(lexicon: &ClassLexicon, ids: impl IntoIterator<Item = usize>) -> Vec<String> {
    ids.into_iter()
        .map(|id| lexicon.label(id).map(|l| l.name.clone()).unwrap_or_else(|| id.to_string()))
        .collect()
}

/// Loaded, read-only inputs shared by every worker.
struct RunContext<'a> {
    cfg: &'a PipelineConfig,
    lexicon: ClassLexicon,
    embedding: EmbeddingMatrix,
}

fn load_or_train_embedding(cfg: &PipelineConfig, lexicon: &ClassLexicon) -> Result<EmbeddingMatrix> {
    let path = &cfg.paths.embedding;
    if path.is_file() {
        return EmbeddingMatrix::load(path);
    }
    let captions = cfg
        .paths
        .captions
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("no embedding and no captions".into()))?;
    log::info!("training embedding from {}", captions.display());
    let sets = load_captions(captions)?;
    let corpus = build_corpus(&sets, lexicon, CorpusMode::Modified)?;
    let emb = train(&corpus, &cfg.train)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    emb.save(path)?;
    Ok(emb)
}

fn prepare_output(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write_probe");
    std::fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    std::fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))?;
    Ok(())
}

/// Runs detection and removal over every image of the dataset and writes
/// `manifest.json` into the output directory.
///
/// Invalid configuration is fatal. Failures of single images are recorded in
/// the manifest with an error code and do not stop the run.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let lexicon = match &cfg.paths.lexicon {
        Some(p) => load_lexicon(p)?,
        None => ClassLexicon::coco_stuff(),
    };
    prepare_output(&cfg.paths.output)?;
    let embedding = load_or_train_embedding(cfg, &lexicon)?;
    let images = list_images(&cfg.paths.images)?;
    if images.is_empty() {
        log::warn!("no images found in {}", cfg.paths.images.display());
    }

    let ctx = RunContext { cfg, lexicon, embedding };
    let writer = ManifestWriter::new();
    images.par_iter().for_each(|path| {
        let id = image_id_of(path);
        let record = process_image(&ctx, &id, path).unwrap_or_else(|e| {
            log::warn!("{id}: {e}");
            ImageRecord::failed(id.clone(), &e)
        });
        writer.append(record);
    });

    let manifest = RunManifest {
        tool_version: tool_version(),
        config: cfg.clone(),
        records: writer.finish(),
    };
    manifest.save(&cfg.paths.output.join("manifest.json"))?;
    Ok(manifest)
}

fn process_image(ctx: &RunContext, id: &str, image_path: &Path) -> Result<ImageRecord> {
    let start = Instant::now();
    let cfg = ctx.cfg;
    let map_path = cfg.paths.labels.join(format!("{id}.png"));
    if !map_path.is_file() {
        return Err(Error::MissingLabelMap(id.to_string()));
    }
    let rgb = image::open(image_path).map_err(|e| Error::image(image_path, e))?.to_rgb8();
    let map = LabelMap::load(&map_path)?;
    if rgb.dimensions() != (map.width, map.height) {
        return Err(Error::MaskSize {
            expected: rgb.dimensions(),
            got: (map.width, map.height),
        });
    }

    let stuff_override = read_stuff_override(cfg.paths.stuff_overrides.as_deref(), id, &ctx.lexicon)?;
    let analysis = analyze_label_map(id, &map, &ctx.lexicon, stuff_override.as_ref(), &cfg.detector)?;
    let report = detect_occlusions(&ctx.embedding, &ctx.lexicon, &analysis.scene, &cfg.detector)?;
    let merged = merge_occlusion_mask(&report, &analysis.masks, map.width, map.height)?;

    let rel_out = format!("images/{id}.png");
    let out_path = cfg.paths.output.join(&rel_out);
    let passthrough = merged.mask.is_empty();
    let mut inpaint_ms = 0.0;
    let output = if passthrough {
        rgb.save(&out_path).map_err(|e| Error::image(&out_path, e))?;
        None
    } else {
        let t = Instant::now();
        let input = FloatImage::from_rgb8(&rgb);
        let mut icfg = cfg.inpaint.clone();
        icfg.seed = icfg.seed.wrapping_add(cfg.seed);
        let filled = inpaint(&input, &merged.mask, &icfg)?;
        inpaint_ms = t.elapsed().as_secs_f64() * 1e3;
        filled.save(&out_path)?;
        Some((input, filled))
    };

    if cfg.output.write_masks {
        let dir = cfg.paths.output.join("masks");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        merged.mask.save(&dir.join(format!("{id}.png")))?;
    }
    if cfg.output.write_composites {
        let dir = cfg.paths.output.join("composites");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let input = FloatImage::from_rgb8(&rgb);
        let after = output.as_ref().map_or(&input, |(_, f)| f);
        input.side_by_side(after).save(&dir.join(format!("{id}.png")))?;
    }

    let removed_ids: Vec<usize> = report
        .removed()
        .map(|e| e.class_id)
        .filter(|c| !merged.missing.contains(c))
        .collect();
    let area = merged.mask.area();
    Ok(ImageRecord {
        image_id: id.to_string(),
        things: names(&ctx.lexicon, analysis.scene.things.iter().copied()),
        stuffs: names(&ctx.lexicon, analysis.scene.stuffs.iter().copied()),
        filtered_out: names(&ctx.lexicon, analysis.filtered_out.iter().copied()),
        mask: Some(MaskStats {
            removed: names(&ctx.lexicon, removed_ids),
            unmasked: names(&ctx.lexicon, merged.missing.iter().copied()),
            area,
            fraction: area as f64 / merged.mask.pixel_count() as f64,
        }),
        report: Some(report),
        output: Some(rel_out),
        passthrough,
        error: None,
        timings: Timings {
            total_ms: start.elapsed().as_secs_f64() * 1e3,
            inpaint_ms,
        },
    })
}

/// Aggregate view of a manifest for the `report` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub images: usize,
    pub failed: usize,
    pub passthrough: usize,
    pub inpainted: usize,
    pub failures_by_code: BTreeMap<String, usize>,
    pub removals_by_class: BTreeMap<String, usize>,
    pub no_context_things: usize,
}

pub fn summarize(manifest: &RunManifest) -> ManifestSummary {
    let mut s = ManifestSummary {
        images: manifest.records.len(),
        failed: 0,
        passthrough: 0,
        inpainted: 0,
        failures_by_code: BTreeMap::new(),
        removals_by_class: BTreeMap::new(),
        no_context_things: 0,
    };
    for r in &manifest.records {
        if let Some(e) = &r.error {
            s.failed += 1;
            *s.failures_by_code.entry(e.code.clone()).or_default() += 1;
            continue;
        }
        if r.passthrough {
            s.passthrough += 1;
        } else {
            s.inpainted += 1;
        }
        if let Some(m) = &r.mask {
            for c in &m.removed {
                *s.removals_by_class.entry(c.clone()).or_default() += 1;
            }
        }
        if let Some(rep) = &r.report {
            s.no_context_things += rep.entries.iter().filter(|e| e.no_context).count();
        }
    }
    s
}

/// Scenes (class sets only) of every label map in `dir`, for co-occurrence
/// counting. Ordered by file name.
pub fn scenes_from_label_dir(dir: &Path, lexicon: &ClassLexicon) -> Result<Vec<SceneContext>> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            paths.push(path);
        }
    }
    paths.sort();
    paths
        .par_iter()
        .map(|p| {
            let map = LabelMap::load(p)?;
            let found = masks_from_labelmap(&map, lexicon)?;
            SceneContext::new(image_id_of(p), found.things.keys().copied().collect(), found.stuffs, BTreeMap::new())
        })
        .collect()
}
