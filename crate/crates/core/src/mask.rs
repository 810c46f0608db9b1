//! Label maps, binary masks and mask hygiene.
//!
//! Label maps are single-channel 8-bit images whose pixel value is the
//! 0-based lexicon id; 255 marks unlabeled pixels (the COCO-Stuff convention).
//! Masks are stored as 0/255 single-channel images.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use image::{GrayImage, ImageReader, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lexicon::{ClassKind, ClassLexicon};
use crate::relation::{OcclusionReport, Verdict};

/// `(x0, y0, x1, y1)` with an exclusive upper corner.
pub type BoundingBox = (u32, u32, u32, u32);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
    area: usize,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
            area: 0,
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize, "bit count must equal width * height");
        let area = bits.iter().filter(|&&b| b).count();
        BinaryMask {
            width,
            height,
            bits,
            area,
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self::from_bits(width, height, bits)
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self::from_bits(width, height, vec![true; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn area(&self) -> usize {
        self.area
    }

    pub fn is_empty(&self) -> bool {
        self.area == 0
    }

    pub fn pixel_count(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = y as usize * self.width as usize + x as usize;
        if self.bits[i] != value {
            self.bits[i] = value;
            if value {
                self.area += 1;
            } else {
                self.area -= 1;
            }
        }
    }

    pub fn union_with(&mut self, other: &BinaryMask) -> Result<()> {
        if other.dims() != self.dims() {
            return Err(Error::MaskSize {
                expected: self.dims(),
                got: other.dims(),
            });
        }
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            if b && !*a {
                *a = true;
                self.area += 1;
            }
        }
        Ok(())
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Tight bounding box `(x0, y0, x1, y1)`, exclusive upper corner.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        if self.area == 0 {
            return None;
        }
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        Some((x0, y0, x1, y1))
    }

    /// Translated copy; pixels shifted off the canvas are lost.
    pub fn shifted(&self, dx: i64, dy: i64) -> BinaryMask {
        let (w, h) = (self.width as i64, self.height as i64);
        BinaryMask::from_fn(self.width, self.height, |x, y| {
            let (sx, sy) = (x as i64 - dx, y as i64 - dy);
            sx >= 0 && sy >= 0 && sx < w && sy < h && self.get(sx as u32, sy as u32)
        })
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| Luma([if self.get(x, y) { 255 } else { 0 }]))
    }

    /// Any non-zero pixel counts as set.
    pub fn from_image(img: &GrayImage) -> Self {
        Self::from_fn(img.width(), img.height(), |x, y| img.get_pixel(x, y)[0] != 0)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(|e| Error::image(path, e))?;
        Ok(Self::from_image(&img.to_luma8()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_image().save(path).map_err(|e| Error::image(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u8>,
}

impl LabelMap {
    pub const UNLABELED: u8 = 255;

    pub fn new(width: u32, height: u32, labels: Vec<u8>) -> Self {
        assert_eq!(labels.len(), width as usize * height as usize, "label count must equal width * height");
        LabelMap { width, height, labels }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> u8) -> Self {
        let mut labels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                labels.push(f(x, y));
            }
        }
        Self::new(width, height, labels)
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    /// Reads an 8-bit single-channel class-id image. Other pixel formats are
    /// rejected rather than converted, since conversion would rewrite ids.
    pub fn load(path: &Path) -> Result<Self> {
        let img = ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(|e| Error::image(path, e))?;
        match img {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                Ok(LabelMap::new(w, h, g.into_raw()))
            }
            other => Err(Error::parse(
                path.display().to_string(),
                0,
                format!("label map must be 8-bit single-channel, got {:?}", other.color()),
            )),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        GrayImage::from_raw(self.width, self.height, self.labels.clone())
            .expect("buffer matches dimensions")
            .save(path)
            .map_err(|e| Error::image(path, e))
    }
}

/// Classes present in a label map: a mask per thing, the set of stuffs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassMasks {
    pub things: BTreeMap<usize, BinaryMask>,
    pub stuffs: BTreeSet<usize>,
}

pub fn masks_from_labelmap(map: &LabelMap, lexicon: &ClassLexicon) -> Result<ClassMasks> {
    let mut out = ClassMasks::default();
    let n = map.width as usize * map.height as usize;
    for (i, &v) in map.labels.iter().enumerate() {
        if v == LabelMap::UNLABELED {
            continue;
        }
        match lexicon.kind(v as usize) {
            None => return Err(Error::UnknownPixelClass(v)),
            Some(ClassKind::Stuff) => {
                out.stuffs.insert(v as usize);
            }
            Some(ClassKind::Thing) => {
                let mask = out.things.entry(v as usize).or_insert_with(|| BinaryMask {
                    width: map.width,
                    height: map.height,
                    bits: vec![false; n],
                    area: 0,
                });
                mask.bits[i] = true;
                mask.area += 1;
            }
        }
    }
    Ok(out)
}

/// Half-widths of a Euclidean disc: for each `dy` in `-r..=r`, the largest
/// `dx` with `dx² + dy² <= r²`.
fn disc_spans(radius: u32) -> Vec<(i64, i64)> {
    let r = radius as i64;
    (-r..=r)
        .map(|dy| {
            let mut w = 0;
            while (w + 1) * (w + 1) + dy * dy <= r * r {
                w += 1;
            }
            (dy, w)
        })
        .collect()
}

/// Morphological dilation by a Euclidean disc: a pixel is set iff some input
/// pixel lies within `radius` of it.
pub fn dilate(mask: &BinaryMask, radius: u32) -> BinaryMask {
    if radius == 0 || mask.is_empty() {
        return mask.clone();
    }
    let (w, h) = (mask.width as i64, mask.height as i64);
    let spans = disc_spans(radius);
    let mut bits = vec![false; mask.bits.len()];
    for y in 0..h {
        for x in 0..w {
            if !mask.bits[(y * w + x) as usize] {
                continue;
            }
            for &(dy, half) in &spans {
                let yy = y + dy;
                if yy < 0 || yy >= h {
                    continue;
                }
                let row = (yy * w) as usize;
                let lo = (x - half).max(0) as usize;
                let hi = (x + half).min(w - 1) as usize;
                bits[row + lo..=row + hi].fill(true);
            }
        }
    }
    BinaryMask::from_bits(mask.width, mask.height, bits)
}

/// Keeps the masks whose area is at least `min_area_fraction` of the image.
pub fn filter_small(masks: &BTreeMap<usize, BinaryMask>, min_area_fraction: f64) -> BTreeMap<usize, BinaryMask> {
    masks
        .iter()
        .filter(|(_, m)| meets_area(m, min_area_fraction))
        .map(|(&id, m)| (id, m.clone()))
        .collect()
}

fn meets_area(mask: &BinaryMask, fraction: f64) -> bool {
    let threshold = fraction * mask.pixel_count() as f64;
    // decimal fractions such as 0.02 are not exact in binary
    mask.area() as f64 >= threshold * (1.0 - 1e-12)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedMask {
    pub mask: BinaryMask,
    /// Removed classes that had no surviving mask; treated as kept.
    pub missing: Vec<usize>,
}

/// Pixel-wise OR of the masks of every class with a Remove verdict.
pub fn merge_occlusion_mask(
    report: &OcclusionReport,
    masks: &BTreeMap<usize, BinaryMask>,
    width: u32,
    height: u32,
) -> Result<MergedMask> {
    let mut out = BinaryMask::new(width, height);
    let mut missing = Vec::new();
    for entry in report.entries.iter().filter(|e| e.verdict == Verdict::Remove) {
        match masks.get(&entry.class_id) {
            Some(m) => out.union_with(m)?,
            None => {
                log::warn!(
                    "class {} marked for removal has no mask (area-filtered?); keeping it",
                    entry.class_id
                );
                missing.push(entry.class_id);
            }
        }
    }
    Ok(MergedMask { mask: out, missing })
}

/// Bounds for [`random_mask_from_things`].
#[derive(Debug, Clone, PartialEq)]
pub struct RandomMaskConfig {
    pub min_area_fraction: f64,
    pub max_area_fraction: f64,
    pub max_dilation: u32,
    pub allow_flip: bool,
    pub max_attempts: usize,
}

impl Default for RandomMaskConfig {
    fn default() -> Self {
        RandomMaskConfig {
            min_area_fraction: 0.01,
            max_area_fraction: 0.5,
            max_dilation: 8,
            allow_flip: true,
            max_attempts: 200,
        }
    }
}

/// Samples a hole-shaped mask for inpainter training or testing: a random
/// ground-truth thing mask, optionally mirrored, moved to a random position
/// where its bounding box fits, then dilated by a random radius. Attempts
/// whose area falls outside the configured fraction bounds are redrawn.
pub fn random_mask_from_things(thing_masks: &[BinaryMask], cfg: &RandomMaskConfig, seed: u64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&cfg.min_area_fraction)
        || !(cfg.min_area_fraction..=1.0).contains(&cfg.max_area_fraction)
        || cfg.max_attempts == 0
    {
        return Err(Error::InvalidMaskConfig(
            "need 0 <= min_area_fraction <= max_area_fraction <= 1 and max_attempts >= 1".into(),
        ));
    }
    let sources: Vec<(&BinaryMask, BoundingBox)> = thing_masks
        .iter()
        .filter_map(|m| m.bounding_box().map(|b| (m, b)))
        .collect();
    if sources.is_empty() {
        return Err(Error::NoSourceMasks);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cfg.max_attempts {
        let (src, (x0, y0, x1, y1)) = sources[rng.random_range(0..sources.len())];
        let flip = cfg.allow_flip && rng.random_bool(0.5);
        let (bw, bh) = (x1 - x0, y1 - y0);
        let nx = rng.random_range(0..=src.width - bw);
        let ny = rng.random_range(0..=src.height - bh);
        let radius = rng.random_range(0..=cfg.max_dilation);

        let mut placed = BinaryMask::new(src.width, src.height);
        for y in 0..bh {
            for x in 0..bw {
                let sx = if flip { x1 - 1 - x } else { x0 + x };
                if src.get(sx, y0 + y) {
                    placed.set(nx + x, ny + y, true);
                }
            }
        }
        let out = dilate(&placed, radius);
        let frac = out.area() as f64 / out.pixel_count() as f64;
        if out.area() > 0 && frac >= cfg.min_area_fraction && frac <= cfg.max_area_fraction {
            return Ok(out);
        }
    }
    Err(Error::MaskSamplingFailed(cfg.max_attempts))
}
