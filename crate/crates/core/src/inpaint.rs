//! Two-stage hole filling: a coarse diffusion fill, then exemplar-based
//! refinement that copies the best-matching patch from outside the hole.
//!
//! Only pixels inside the mask are ever written. Everything outside the mask
//! comes back bit-for-bit.

use std::collections::VecDeque;
use std::path::Path;

use image::{ImageReader, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    width: u32,
    height: u32,
    data: Vec<[f32; 3]>,
}

impl FloatImage {
    pub fn new(width: u32, height: u32, data: Vec<[f32; 3]>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize, "pixel count must equal width * height");
        FloatImage { width, height, data }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
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

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> [f32; 3] {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let data = img
            .pixels()
            .map(|p| [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0])
            .collect();
        FloatImage::new(img.width(), img.height(), data)
    }

    /// Quantizes back to 8 bits. Exact inverse of [`FloatImage::from_rgb8`].
    pub fn to_rgb8(&self) -> RgbImage {
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        RgbImage::from_fn(self.width, self.height, |x, y| {
            let p = self.get(x, y);
            Rgb([q(p[0]), q(p[1]), q(p[2])])
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(|e| Error::image(path, e))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|e| Error::image(path, e))
    }

    /// `self` on the left, `other` on the right.
    pub fn side_by_side(&self, other: &FloatImage) -> FloatImage {
        let h = self.height.max(other.height);
        FloatImage::from_fn(self.width + other.width, h, |x, y| {
            let (img, xx) = if x < self.width { (self, x) } else { (other, x - self.width) };
            if y < img.height {
                img.get(xx, y)
            } else {
                [0.0; 3]
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Exhaustive,
    /// Score a seeded random subset of this many source patches per target.
    Sampled { candidates: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InpaintConfig {
    pub patch_size: u32,
    pub coarse_iters: usize,
    /// Source patch centers are taken every `search_stride` pixels on a grid
    /// aligned with the target center.
    pub search_stride: u32,
    pub blend_width: u32,
    /// Weight of still-coarse hole pixels in the patch distance; known and
    /// already refined pixels weigh 1.
    pub coarse_weight: f32,
    pub search: SearchMode,
    pub seed: u64,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        InpaintConfig {
            patch_size: 7,
            coarse_iters: 200,
            search_stride: 2,
            blend_width: 1,
            coarse_weight: 0.25,
            search: SearchMode::Exhaustive,
            seed: 0,
        }
    }
}

impl InpaintConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInpaintConfig(m.to_string()));
        if self.patch_size < 3 || self.patch_size.is_multiple_of(2) {
            return bad("patch_size must be odd and at least 3");
        }
        if self.coarse_iters < 1 {
            return bad("coarse_iters must be at least 1");
        }
        if self.search_stride < 1 {
            return bad("search_stride must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.coarse_weight) {
            return bad("coarse_weight must lie in [0, 1]");
        }
        if let SearchMode::Sampled { candidates: 0 } = self.search {
            return bad("sampled search needs at least one candidate");
        }
        Ok(())
    }
}

fn check_dims(img: &FloatImage, mask: &BinaryMask) -> Result<()> {
    if img.dims() != mask.dims() {
        return Err(Error::MaskSize {
            expected: img.dims(),
            got: mask.dims(),
        });
    }
    Ok(())
}

fn neighbors4(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let mut out = [usize::MAX; 4];
    if x > 0 {
        out[0] = y * w + x - 1;
    }
    if x + 1 < w {
        out[1] = y * w + x + 1;
    }
    if y > 0 {
        out[2] = (y - 1) * w + x;
    }
    if y + 1 < h {
        out[3] = (y + 1) * w + x;
    }
    out.into_iter().filter(|&i| i != usize::MAX)
}

/// Replaces masked pixels by a diffusion from the hole boundary.
///
/// Holes are first seeded layer by layer from the outside in (each pixel takes
/// the mean of its already-valued 4-neighbors), then relaxed with `iters`
/// Jacobi sweeps of 4-neighbor averaging.
pub fn coarse_fill(img: &FloatImage, mask: &BinaryMask, iters: usize) -> Result<FloatImage> {
    check_dims(img, mask)?;
    if mask.is_empty() {
        return Ok(img.clone());
    }
    if mask.area() == mask.pixel_count() {
        return Err(Error::FullFrameMask);
    }
    let (w, h) = (img.width as usize, img.height as usize);
    let bits = mask.bits();
    let mut cur: Vec<[f64; 3]> = img.data.iter().map(|p| p.map(f64::from)).collect();

    let mut valued: Vec<bool> = bits.iter().map(|&b| !b).collect();
    let mut pending: Vec<usize> = (0..w * h).filter(|&i| bits[i]).collect();
    while !pending.is_empty() {
        let mut layer = Vec::new();
        let mut rest = Vec::new();
        for &i in &pending {
            let (x, y) = (i % w, i / w);
            let mut acc = [0.0; 3];
            let mut n = 0;
            for j in neighbors4(x, y, w, h).filter(|&j| valued[j]) {
                for c in 0..3 {
                    acc[c] += cur[j][c];
                }
                n += 1;
            }
            if n > 0 {
                layer.push((i, acc.map(|a| a / n as f64)));
            } else {
                rest.push(i);
            }
        }
        for &(i, v) in &layer {
            cur[i] = v;
            valued[i] = true;
        }
        pending = rest;
    }

    let holes: Vec<usize> = (0..w * h).filter(|&i| bits[i]).collect();
    let mut next = cur.clone();
    for _ in 0..iters {
        let mut delta = 0.0f64;
        for &i in &holes {
            let (x, y) = (i % w, i / w);
            let mut acc = [0.0; 3];
            let mut n = 0;
            for j in neighbors4(x, y, w, h) {
                for c in 0..3 {
                    acc[c] += cur[j][c];
                }
                n += 1;
            }
            let v = acc.map(|a| a / n as f64);
            for c in 0..3 {
                delta = delta.max((v[c] - cur[i][c]).abs());
            }
            next[i] = v;
        }
        for &i in &holes {
            cur[i] = next[i];
        }
        if delta < 1e-9 {
            break;
        }
    }

    let mut out = img.clone();
    for &i in &holes {
        out.data[i] = cur[i].map(|v| v.clamp(0.0, 1.0) as f32);
    }
    Ok(out)
}

/// Breadth-first distance (in 4-steps) of every hole pixel from the nearest
/// pixel outside the hole.
fn onion_order(mask: &BinaryMask) -> Vec<usize> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let bits = mask.bits();
    let mut depth = vec![usize::MAX; w * h];
    let mut queue = VecDeque::new();
    for i in 0..w * h {
        if !bits[i] {
            depth[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for j in neighbors4(i % w, i / w, w, h) {
            if depth[j] == usize::MAX {
                depth[j] = depth[i] + 1;
                queue.push_back(j);
            }
        }
    }
    let mut order: Vec<usize> = (0..w * h).filter(|&i| bits[i]).collect();
    order.sort_by_key(|&i| (depth[i], i));
    order
}

/// For every pixel, whether a patch of `radius` centered there lies inside
/// the image and touches no hole pixel.
fn valid_centers(mask: &BinaryMask, radius: usize) -> Vec<bool> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let mut valid = vec![false; w * h];
    if w < 2 * radius + 1 || h < 2 * radius + 1 {
        return valid;
    }
    // summed-area table of hole pixels
    let mut sat = vec![0u32; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0;
        for x in 0..w {
            row += mask.get(x as u32, y as u32) as u32;
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let count = |x0: usize, y0: usize, x1: usize, y1: usize| {
        sat[y1 * (w + 1) + x1] + sat[y0 * (w + 1) + x0] - sat[y0 * (w + 1) + x1] - sat[y1 * (w + 1) + x0]
    };
    for cy in radius..h - radius {
        for cx in radius..w - radius {
            valid[cy * w + cx] = count(cx - radius, cy - radius, cx + radius + 1, cy + radius + 1) == 0;
        }
    }
    valid
}

/// Valid source centers whose offset from the target `(px, py)` is a multiple
/// of `stride` on both axes, in row-major order. Falls back to every valid
/// center when that grid is empty.
fn source_grid(valid: &[bool], w: usize, h: usize, radius: usize, stride: usize, px: usize, py: usize) -> Vec<(usize, usize)> {
    let first = |p: usize| radius + (p as isize - radius as isize).rem_euclid(stride as isize) as usize;
    let grid = |step: usize, x0: usize, y0: usize| -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if h < 2 * radius + 1 || w < 2 * radius + 1 {
            return out;
        }
        for cy in (y0..h - radius).step_by(step) {
            for cx in (x0..w - radius).step_by(step) {
                if valid[cy * w + cx] {
                    out.push((cx, cy));
                }
            }
        }
        out
    };
    let aligned = grid(stride, first(px), first(py));
    if aligned.is_empty() && stride > 1 {
        grid(1, radius, radius)
    } else {
        aligned
    }
}

/// Replaces hole pixels with content copied from the best-matching patch
/// outside the hole, visiting the hole from its boundary inward.
///
/// `img` should already be coarsely filled: the patch distance uses known,
/// refined and (down-weighted) coarse pixels alike. Each accepted source patch
/// fills every not-yet-refined hole pixel it covers; refined pixels within
/// `blend_width` of the newly written ones are feathered toward the new patch.
pub fn refine_patches(img: &FloatImage, mask: &BinaryMask, cfg: &InpaintConfig) -> Result<FloatImage> {
    cfg.validate()?;
    check_dims(img, mask)?;
    if mask.is_empty() {
        return Ok(img.clone());
    }
    let (w, h) = (img.width as usize, img.height as usize);
    let radius = (cfg.patch_size / 2) as usize;
    let valid = valid_centers(mask, radius);
    if !valid.contains(&true) {
        return Err(Error::NoSourcePatch);
    }

    let bits = mask.bits();
    let mut out = img.clone();
    // 0 = known, 1 = coarse hole pixel, 2 = refined hole pixel
    let mut state: Vec<u8> = bits.iter().map(|&b| b as u8).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let r = radius as isize;

    for p in onion_order(mask) {
        if state[p] == 2 {
            continue;
        }
        let (px, py) = ((p % w) as isize, (p / w) as isize);
        // in-bounds target offsets with their weights
        let mut offsets = Vec::with_capacity(cfg.patch_size.pow(2) as usize);
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (px + dx, py + dy);
                if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                    let i = y as usize * w + x as usize;
                    let weight = if state[i] == 1 { cfg.coarse_weight } else { 1.0 };
                    offsets.push((dx, dy, i, weight));
                }
            }
        }

        let sources = source_grid(&valid, w, h, radius, cfg.search_stride as usize, px as usize, py as usize);
        let candidates: Vec<usize> = match cfg.search {
            SearchMode::Exhaustive => (0..sources.len()).collect(),
            SearchMode::Sampled { candidates } => {
                let mut picked: Vec<usize> = (0..candidates.min(sources.len()))
                    .map(|_| rng.random_range(0..sources.len()))
                    .collect();
                picked.sort_unstable();
                picked.dedup();
                picked
            }
        };

        let data = &out.data;
        let ssd = |k: usize, bound: f32| -> f32 {
            let (sx, sy) = sources[k];
            let mut acc = 0.0f32;
            for &(dx, dy, i, weight) in &offsets {
                if weight == 0.0 {
                    continue;
                }
                let s = data[(sy as isize + dy) as usize * w + (sx as isize + dx) as usize];
                let t = data[i];
                let d = (s[0] - t[0]).powi(2) + (s[1] - t[1]).powi(2) + (s[2] - t[2]).powi(2);
                acc += weight * d;
                if acc > bound {
                    return acc;
                }
            }
            acc
        };
        let best = candidates
            .par_chunks(64)
            .map(|chunk| {
                let mut best = (f32::INFINITY, usize::MAX);
                for &k in chunk {
                    let d = ssd(k, best.0);
                    if d < best.0 || (d == best.0 && k < best.1) {
                        best = (d, k);
                    }
                }
                best
            })
            .reduce(
                || (f32::INFINITY, usize::MAX),
                |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
            );
        let (sx, sy) = sources[best.1];

        let mut fresh = Vec::new();
        for &(dx, dy, i, _) in &offsets {
            if state[i] == 1 {
                let s = out.data[(sy as isize + dy) as usize * w + (sx as isize + dx) as usize];
                out.data[i] = s;
                state[i] = 2;
                fresh.push((dx, dy));
            }
        }
        if cfg.blend_width > 0 && !fresh.is_empty() {
            let bw = cfg.blend_width as isize;
            for &(dx, dy, i, weight) in &offsets {
                // previously refined hole pixels only
                if state[i] != 2 || weight != 1.0 || !bits[i] || fresh.contains(&(dx, dy)) {
                    continue;
                }
                let d = fresh
                    .iter()
                    .map(|&(fx, fy)| (fx - dx).abs().max((fy - dy).abs()))
                    .min()
                    .unwrap_or(isize::MAX);
                if d > bw {
                    continue;
                }
                let alpha = 0.5 * (1.0 - (d - 1) as f32 / bw as f32);
                let s = out.data[(sy as isize + dy) as usize * w + (sx as isize + dx) as usize];
                let old = out.data[i];
                out.data[i] = [0, 1, 2].map(|c| (old[c] - alpha * (old[c] - s[c])).clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

/// Coarse fill followed by patch refinement.
pub fn inpaint(img: &FloatImage, mask: &BinaryMask, cfg: &InpaintConfig) -> Result<FloatImage> {
    cfg.validate()?;
    let coarse = coarse_fill(img, mask, cfg.coarse_iters)?;
    refine_patches(&coarse, mask, cfg)
}

/// Sum of squared channel differences, optionally restricted to a region.
pub fn sum_squared_error(a: &FloatImage, b: &FloatImage, region: Option<&BinaryMask>) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data
        .iter()
        .zip(&b.data)
        .enumerate()
        .filter(|(i, _)| region.is_none_or(|m| m.bits()[*i]))
        .map(|(_, (p, q))| (0..3).map(|c| (p[c] as f64 - q[c] as f64).powi(2)).sum::<f64>())
        .sum()
}

/// Peak signal-to-noise ratio in dB over `region` (or the whole image).
pub fn psnr(a: &FloatImage, b: &FloatImage, region: Option<&BinaryMask>) -> f64 {
    let n = region.map_or(a.data.len(), BinaryMask::area) * 3;
    let mse = sum_squared_error(a, b, region) / n.max(1) as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}
