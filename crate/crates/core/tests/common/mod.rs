#![allow(dead_code)]

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use occlusion_core::embedding::EmbeddingMatrix;
use occlusion_core::inpaint::FloatImage;
use occlusion_core::mask::{BinaryMask, LabelMap};
use occlusion_core::pipeline::{PathsConfig, PipelineConfig};

pub const FIXTURE_LEXICON: &str = "\
# fixture classes
thing | dog
thing | frisbee
thing | toaster
stuff | grass
stuff | sky
stuff | wall
";

pub const DOG: u8 = 0;
pub const FRISBEE: u8 = 1;
pub const TOASTER: u8 = 2;
pub const GRASS: u8 = 3;
pub const SKY: u8 = 4;
pub const WALL: u8 = 5;

pub const FIXTURE_SIZE: u32 = 48;
pub const FIXTURE_IDS: [&str; 5] = ["a_park", "b_toaster_park", "c_lone_dog", "d_frisbee", "e_kitchen"];

/// Outdoor classes point one way, kitchen classes another. The toaster sits
/// far from the park context but close to the wall.
pub fn fixture_embedding() -> EmbeddingMatrix {
    EmbeddingMatrix::from_rows(vec![
        ("dog", vec![1.0, 0.0, 0.0, 0.0]),
        ("frisbee", vec![0.9, 0.3, 0.0, 0.0]),
        ("toaster", vec![-0.6, 0.0, 0.0, 0.8]),
        ("grass", vec![0.8, 0.4, 0.2, 0.0]),
        ("sky", vec![0.7, 0.5, 0.1, 0.1]),
        ("wall", vec![0.0, 0.0, 0.0, 1.0]),
    ])
    .unwrap()
}

fn rect(x0: u32, y0: u32, x1: u32, y1: u32) -> impl Fn(u32, u32) -> bool {
    move |x, y| x >= x0 && x < x1 && y >= y0 && y < y1
}

/// Label map of a fixture scene.
pub fn fixture_label_map(id: &str) -> LabelMap {
    let s = FIXTURE_SIZE;
    let park = |y: u32| if y < 20 { SKY } else { GRASS };
    match id {
        "a_park" => {
            let dog = rect(10, 24, 22, 36);
            // 16 pixels: below the 2% area threshold
            let crumb = rect(40, 40, 44, 44);
            LabelMap::from_fn(s, s, move |x, y| {
                if dog(x, y) {
                    DOG
                } else if crumb(x, y) {
                    TOASTER
                } else {
                    park(y)
                }
            })
        }
        "b_toaster_park" => {
            let dog = rect(6, 26, 18, 38);
            let toaster = rect(28, 26, 38, 36);
            LabelMap::from_fn(s, s, move |x, y| {
                if dog(x, y) {
                    DOG
                } else if toaster(x, y) {
                    TOASTER
                } else {
                    park(y)
                }
            })
        }
        "c_lone_dog" => {
            let dog = rect(16, 16, 30, 30);
            LabelMap::from_fn(s, s, move |x, y| if dog(x, y) { DOG } else { LabelMap::UNLABELED })
        }
        "d_frisbee" => {
            let dog = rect(8, 22, 20, 36);
            let frisbee = rect(30, 10, 38, 16);
            LabelMap::from_fn(s, s, move |x, y| {
                if dog(x, y) {
                    DOG
                } else if frisbee(x, y) {
                    FRISBEE
                } else {
                    park(y)
                }
            })
        }
        "e_kitchen" => {
            let toaster = rect(18, 20, 30, 30);
            LabelMap::from_fn(s, s, move |x, y| if toaster(x, y) { TOASTER } else { WALL })
        }
        other => panic!("unknown fixture {other}"),
    }
}

/// Noisy per-class colors so no two pixels are trivially interchangeable.
pub fn fixture_image(id: &str, map: &LabelMap) -> RgbImage {
    let seed = id.bytes().fold(17u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = RgbImage::new(map.width, map.height);
    for y in 0..map.height {
        for x in 0..map.width {
            let n: [u8; 3] = [0; 3].map(|_| rng.random_range(0..48));
            let base = match map.get(x, y) {
                DOG => [130, 80, 40],
                FRISBEE => [200, 200, 0],
                TOASTER => [255, 0, 0],
                GRASS => [40, 130, 40],
                SKY => [90, 150, 200],
                WALL => [170, 160, 150],
                _ => [100, 100, 100],
            };
            // the toaster is a flat color found nowhere else
            let px = if base == [255, 0, 0] { base } else { [0, 1, 2].map(|c| base[c] + n[c]) };
            img.put_pixel(x, y, Rgb(px));
        }
    }
    img
}

/// Writes images, label maps, lexicon and embedding under `root` and returns
/// a config whose output directory is `root/<out>`.
pub fn write_fixture_dataset(root: &Path, out: &str) -> PipelineConfig {
    let images = root.join("images");
    let labels = root.join("labels");
    std::fs::create_dir_all(&images).unwrap();
    std::fs::create_dir_all(&labels).unwrap();
    for id in FIXTURE_IDS {
        let map = fixture_label_map(id);
        map.save(&labels.join(format!("{id}.png"))).unwrap();
        fixture_image(id, &map).save(images.join(format!("{id}.png"))).unwrap();
    }
    std::fs::write(root.join("lexicon.txt"), FIXTURE_LEXICON).unwrap();
    fixture_embedding().save(&root.join("emb.vec")).unwrap();
    fixture_config(root, out)
}

pub fn fixture_config(root: &Path, out: &str) -> PipelineConfig {
    PipelineConfig::new(PathsConfig {
        images: root.join("images"),
        labels: root.join("labels"),
        output: root.join(out),
        embedding: root.join("emb.vec"),
        lexicon: Some(root.join("lexicon.txt")),
        captions: None,
        stuff_overrides: None,
    })
}

pub fn output_image(cfg: &PipelineConfig, id: &str) -> PathBuf {
    cfg.paths.output.join("images").join(format!("{id}.png"))
}

pub fn gray(v: f32) -> [f32; 3] {
    [v, v, v]
}

pub fn checkerboard(size: u32, cell: u32) -> FloatImage {
    FloatImage::from_fn(size, size, |x, y| gray(((x / cell + y / cell) % 2) as f32))
}

/// Periodic synthetic textures with a known ground truth and a hole.
pub struct TextureCase {
    pub name: &'static str,
    pub truth: FloatImage,
    pub mask: BinaryMask,
}

fn random_tile(seed: u64, period: u32) -> Vec<[f32; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..period * period)
        .map(|_| [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()])
        .collect()
}

pub fn texture_suite() -> Vec<TextureCase> {
    let n = 32;
    let tile = random_tile(5, 6);
    let textures: Vec<(&'static str, FloatImage)> = vec![
        ("checkerboard", checkerboard(n, 4)),
        ("vertical_stripes", FloatImage::from_fn(n, n, |x, _| gray(if x % 6 < 3 { 0.1 } else { 0.9 }))),
        ("horizontal_stripes", FloatImage::from_fn(n, n, |_, y| [0.2, (y % 5) as f32 / 4.0, 0.7])),
        ("diagonal", FloatImage::from_fn(n, n, |x, y| gray(if (x + y) % 8 < 4 { 0.0 } else { 1.0 }))),
        ("plaid", FloatImage::from_fn(n, n, |x, y| [(x % 4) as f32 / 3.0, (y % 4) as f32 / 3.0, 0.5])),
        ("random_tile", FloatImage::from_fn(n, n, move |x, y| tile[((y % 6) * 6 + x % 6) as usize])),
    ];
    let holes = [(13, 13, 19, 19), (8, 18, 14, 23), (20, 6, 25, 12)];
    let mut out = Vec::new();
    for (name, truth) in textures {
        for &(x0, y0, x1, y1) in &holes {
            out.push(TextureCase {
                name,
                truth: truth.clone(),
                mask: BinaryMask::from_fn(n, n, rect(x0, y0, x1, y1)),
            });
        }
    }
    out
}

/// The image with its hole painted mid-gray.
pub fn damaged(case: &TextureCase) -> FloatImage {
    let (w, h) = case.truth.dims();
    FloatImage::from_fn(w, h, |x, y| if case.mask.get(x, y) { gray(0.5) } else { case.truth.get(x, y) })
}

pub fn random_mask(rng: &mut impl Rng, w: u32, h: u32, density: f64) -> BinaryMask {
    let bits = (0..w * h).map(|_| rng.random_bool(density)).collect();
    BinaryMask::from_bits(w, h, bits)
}

/// Dilation straight from the definition: set iff some input pixel lies
/// within Euclidean distance `r`.
pub fn brute_force_dilate(mask: &BinaryMask, r: u32) -> BinaryMask {
    let (w, h) = mask.dims();
    let on: Vec<(i64, i64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y))
        .map(|(x, y)| (x as i64, y as i64))
        .collect();
    let r2 = (r as i64) * (r as i64);
    BinaryMask::from_fn(w, h, |x, y| {
        on.iter().any(|&(ox, oy)| {
            let (dx, dy) = (ox - x as i64, oy - y as i64);
            dx * dx + dy * dy <= r2
        })
    })
}
