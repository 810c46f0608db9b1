//! Acceptance suite. Runs every criterion, prints one PASS/FAIL/SKIP line
//! each and exits non-zero if any criterion fails.
//!
//! The full-dataset Pearson check runs only when `COCO_STUFF_ROOT` points at a
//! COCO-Stuff download containing `annotations/captions_train2017.json` and
//! `stuffthingmaps_trainval2017/train2017/`.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use occlusion_core::corpus::{build_corpus, generate_pairs, load_captions, BoundaryMode, Corpus, CorpusMode};
use occlusion_core::embedding::{cosine_similarity, sgns_loss_and_grad, train, EmbeddingMatrix, TrainConfig};
use occlusion_core::eval::{correlate_relations, count_cooccurrence};
use occlusion_core::inpaint::{coarse_fill, inpaint, sum_squared_error, FloatImage, InpaintConfig};
use occlusion_core::lexicon::{ClassKind, ClassLexicon, LabelSpec};
use occlusion_core::mask::{dilate, filter_small, BinaryMask};
use occlusion_core::pipeline::{run_pipeline, scenes_from_label_dir};
use occlusion_core::relation::{relation_score, SceneContext, Verdict};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Criterion = fn() -> Outcome;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn main() {
    let criteria: [(&str, Criterion); 8] = [
        ("1 pearson reproduction on COCO-Stuff", pearson_reproduction),
        ("2 relation score oracle equivalence", relation_oracle),
        ("3 pair generation boundary safety", boundary_safety),
        ("4 skip-gram gradient correctness", gradient_check),
        ("5 embedding separation", embedding_separation),
        ("6 mask hygiene exactness", mask_hygiene),
        ("7 inpainting contracts", inpainting_contracts),
        ("8 end-to-end determinism and verdicts", end_to_end),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Skip(d) => ("SKIP", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("acceptance {tag} [{name}] {detail} ({secs:.2}s)");
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn pearson_reproduction() -> Outcome {
    let Some(root) = std::env::var_os("COCO_STUFF_ROOT").map(PathBuf::from) else {
        return Outcome::Skip("COCO_STUFF_ROOT not set; dataset absent, coefficient not verified".into());
    };
    let captions = root.join("annotations/captions_train2017.json");
    let maps = root.join("stuffthingmaps_trainval2017/train2017");
    if !captions.is_file() || !maps.is_dir() {
        return Outcome::Fail(format!("expected {} and {}", captions.display(), maps.display()));
    }
    let lexicon = ClassLexicon::coco_stuff();
    let run = || -> occlusion_core::Result<(f64, usize)> {
        let corpus = build_corpus(&load_captions(&captions)?, &lexicon, CorpusMode::Modified)?;
        let cfg = TrainConfig {
            dim: 128,
            window: 3,
            steps: 100_000,
            seed: 7,
            ..TrainConfig::default()
        };
        let emb = train(&corpus, &cfg)?;
        let scenes = scenes_from_label_dir(&maps, &lexicon)?;
        let labels = lexicon.labels().iter().map(|l| l.token().to_string()).collect();
        let stats = count_cooccurrence(&scenes, labels);
        let corr = correlate_relations(&emb, &stats)?;
        Ok((corr.coefficient, corr.pair_count))
    };
    match run() {
        Ok((r, pairs)) => check((0.37..=0.67).contains(&r), format!("pearson {r:.4} over {pairs} pairs, want [0.37, 0.67]")),
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn relation_oracle() -> Outcome {
    let specs: Vec<LabelSpec> = (0..6)
        .map(|i| LabelSpec::new(&format!("t{i}"), ClassKind::Thing))
        .chain((0..6).map(|i| LabelSpec::new(&format!("s{i}"), ClassKind::Stuff)))
        .collect();
    let lexicon = ClassLexicon::new(specs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for scene_no in 0..1000 {
        let dim = rng.random_range(2..=16);
        let vectors: Vec<Vec<f64>> = (0..12).map(|_| unit_vector(&mut rng, dim)).collect();
        let emb = EmbeddingMatrix::from_rows(
            lexicon.labels().iter().map(|l| (l.token().to_string(), vectors[l.id].clone())).collect(),
        )
        .unwrap();
        let size = rng.random_range(1..=6);
        let mut ids: Vec<usize> = (0..12).collect();
        for i in 0..size {
            let j = rng.random_range(i..12);
            ids.swap(i, j);
        }
        let mut chosen = ids[..size].to_vec();
        if !chosen.iter().any(|&c| c < 6) {
            chosen[0] = rng.random_range(0..6);
            chosen.sort_unstable();
            chosen.dedup();
        }
        let things: Vec<usize> = chosen.iter().copied().filter(|&c| c < 6).collect();
        let stuffs: Vec<usize> = chosen.iter().copied().filter(|&c| c >= 6).collect();
        let scene = SceneContext::from_sets(format!("s{scene_no}"), &things, &stuffs).unwrap();
        for &t in &things {
            let got = relation_score(&emb, &lexicon, &scene, t).unwrap();
            let others: Vec<usize> = chosen.iter().copied().filter(|&c| c != t).collect();
            let want = (!others.is_empty()).then(|| {
                others
                    .iter()
                    .map(|&o| vectors[t].iter().zip(&vectors[o]).map(|(a, b)| a * b).sum::<f64>())
                    .sum::<f64>()
                    / others.len() as f64
            });
            match (got, want) {
                (Some(g), Some(w)) => worst = worst.max((g - w).abs()),
                (None, None) => {}
                _ => return Outcome::Fail(format!("scene {scene_no}: presence mismatch {got:?} vs {want:?}")),
            }
            checked += 1;
        }
    }
    check(worst <= 1e-9, format!("{checked} scores over 1000 scenes, max |diff| {worst:.2e} (tol 1e-9)"))
}

fn boundary_safety() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut total_pairs = 0usize;
    for corpus_no in 0..200 {
        // document d only uses tokens d*100 .. d*100+9, so a pair's documents
        // are recoverable from its tokens
        let n_docs = rng.random_range(1..8);
        let docs: Vec<Vec<usize>> = (0..n_docs)
            .map(|d| {
                let len = rng.random_range(0..9);
                (0..len).map(|_| d * 100 + rng.random_range(0..10)).collect()
            })
            .collect();
        for window in 1..=5 {
            let mut hard: Vec<(usize, usize)> = generate_pairs(&docs, window, BoundaryMode::HardBoundary).unwrap().collect();
            let mut eop: Vec<(usize, usize)> = generate_pairs(&docs, window, BoundaryMode::LiteralEop).unwrap().collect();
            if let Some(&(c, o)) = hard.iter().chain(&eop).find(|(c, o)| c / 100 != o / 100) {
                return Outcome::Fail(format!("corpus {corpus_no} window {window}: cross-document pair ({c}, {o})"));
            }
            let mut oracle = Vec::new();
            for doc in &docs {
                for i in 0..doc.len() {
                    for j in 0..doc.len() {
                        if i != j && i.abs_diff(j) <= window {
                            oracle.push((doc[i], doc[j]));
                        }
                    }
                }
            }
            hard.sort_unstable();
            eop.sort_unstable();
            oracle.sort_unstable();
            if hard != eop || hard != oracle {
                return Outcome::Fail(format!("corpus {corpus_no} window {window}: pair multisets differ"));
            }
            total_pairs += hard.len();
        }
    }
    Outcome::Pass(format!("200 corpora x windows 1-5, {total_pairs} pairs, no cross-document pairs, modes agree"))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
    for _ in 0..50 {
        let dim = rng.random_range(1..=8);
        let k = rng.random_range(1..=5);
        let vec = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect() };
        let center = vec(&mut rng);
        let context = vec(&mut rng);
        let negs: Vec<Vec<f64>> = (0..k).map(|_| vec(&mut rng)).collect();
        let loss = |c: &[f64], o: &[f64], n: &[Vec<f64>]| {
            let refs: Vec<&[f64]> = n.iter().map(Vec::as_slice).collect();
            sgns_loss_and_grad(c, o, &refs).loss
        };
        let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        let g = sgns_loss_and_grad(&center, &context, &refs);
        for d in 0..dim {
            let bump = |v: &[f64], s: f64| {
                let mut v = v.to_vec();
                v[d] += s;
                v
            };
            let fd = (loss(&bump(&center, h), &context, &negs) - loss(&bump(&center, -h), &context, &negs)) / (2.0 * h);
            worst = worst.max(rel(fd, g.center[d]));
            let fd = (loss(&center, &bump(&context, h), &negs) - loss(&center, &bump(&context, -h), &negs)) / (2.0 * h);
            worst = worst.max(rel(fd, g.context[d]));
            for n in 0..k {
                let mut plus = negs.clone();
                let mut minus = negs.clone();
                plus[n][d] += h;
                minus[n][d] -= h;
                let fd = (loss(&center, &context, &plus) - loss(&center, &context, &minus)) / (2.0 * h);
                worst = worst.max(rel(fd, g.negatives[n][d]));
            }
        }
    }
    check(worst <= 1e-4, format!("50 instances, max relative error {worst:.2e} (tol 1e-4)"))
}

fn embedding_separation() -> Outcome {
    let mut docs = Vec::new();
    for _ in 0..40 {
        docs.push(["a", "b", "a", "b"].map(String::from).to_vec());
        docs.push(["c", "c", "c"].map(String::from).to_vec());
    }
    let corpus = Corpus::new(docs, CorpusMode::Modified);
    let mut wins = 0;
    let mut margins = Vec::new();
    for seed in 1..=5 {
        let cfg = TrainConfig {
            dim: 16,
            steps: 3000,
            seed,
            ..TrainConfig::default()
        };
        let e = train(&corpus, &cfg).unwrap();
        let cos = |x: &str, y: &str| cosine_similarity(e.vector(x).unwrap(), e.vector(y).unwrap()).unwrap();
        let margin = cos("a", "b") - cos("a", "c");
        wins += (margin > 0.0) as usize;
        margins.push(format!("{margin:+.3}"));
    }
    check(wins >= 4, format!("cos(A,B) > cos(A,C) in {wins}/5 seeds, margins [{}]", margins.join(", ")))
}

fn mask_hygiene() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..100 {
        let density = rng.random_range(0.005..0.15);
        let mask = random_mask(&mut rng, 32, 32, density);
        let r = rng.random_range(0..=6);
        if dilate(&mask, r) != brute_force_dilate(&mask, r) {
            return Outcome::Fail(format!("mask {i}, radius {r}: dilation differs from the distance definition"));
        }
    }
    // (width, height, area, kept at 2%)
    let fixtures = [
        (50, 50, 49, false),
        (50, 50, 50, true),
        (50, 50, 51, true),
        (32, 32, 20, false),
        (32, 32, 21, true),
        (100, 100, 199, false),
        (100, 100, 200, true),
        (10, 10, 1, false),
        (10, 10, 2, true),
    ];
    for (n, &(w, h, area, keep)) in fixtures.iter().enumerate() {
        let m = BinaryMask::from_fn(w, h, |x, y| ((y * w + x) as usize) < area);
        let masks = BTreeMap::from([(n, m)]);
        if filter_small(&masks, 0.02).contains_key(&n) != keep {
            return Outcome::Fail(format!("{w}x{h} area {area}: expected keep={keep}"));
        }
    }
    Outcome::Pass(format!("100 random 32x32 dilations exact, {} area-boundary fixtures exact", fixtures.len()))
}

fn outside_preserved(a: &FloatImage, b: &FloatImage, mask: &BinaryMask) -> bool {
    a.pixels()
        .iter()
        .zip(b.pixels())
        .zip(mask.bits())
        .all(|((p, q), &m)| m || p.map(f32::to_bits) == q.map(f32::to_bits))
}

fn inpainting_contracts() -> Outcome {
    let cfg = InpaintConfig::default();
    let suite = texture_suite();
    let mut coarse_total = 0.0;
    let mut refined_total = 0.0;
    let mut fixtures = 0;
    for case in &suite {
        let input = damaged(case);
        let coarse = coarse_fill(&input, &case.mask, cfg.coarse_iters).unwrap();
        let refined = inpaint(&input, &case.mask, &cfg).unwrap();
        if !outside_preserved(&input, &coarse, &case.mask) || !outside_preserved(&input, &refined, &case.mask) {
            return Outcome::Fail(format!("{}: pixels outside the mask changed", case.name));
        }
        coarse_total += sum_squared_error(&coarse, &case.truth, Some(&case.mask));
        refined_total += sum_squared_error(&refined, &case.truth, Some(&case.mask));
        fixtures += 1;
    }
    // random masks on the suite textures
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in suite.iter().step_by(3) {
        let mask = dilate(&random_mask(&mut rng, 32, 32, 0.01), 2);
        if mask.is_empty() {
            continue;
        }
        let out = inpaint(&case.truth, &mask, &cfg).unwrap();
        if !outside_preserved(&case.truth, &out, &mask) {
            return Outcome::Fail(format!("{}: random mask changed outside pixels", case.name));
        }
        fixtures += 1;
    }

    let truth = checkerboard(32, 4);
    let cell = BinaryMask::from_fn(32, 32, |x, y| (12..16).contains(&x) && (16..20).contains(&y));
    let hole = FloatImage::from_fn(32, 32, |x, y| if cell.get(x, y) { gray(0.5) } else { truth.get(x, y) });
    let exact = inpaint(&hole, &cell, &cfg).unwrap() == truth;

    let n = suite.len() as f64;
    let (coarse_mean, refined_mean) = (coarse_total / n, refined_total / n);
    check(
        exact && refined_mean <= coarse_mean,
        format!(
            "{fixtures} fixtures preserve outside pixels; checkerboard cell exact={exact}; mean SSD refined {refined_mean:.3} <= coarse {coarse_mean:.3}"
        ),
    )
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_fixture_dataset(dir.path(), "out");
    let first = run_pipeline(&cfg).unwrap();
    let bytes1: Vec<Vec<u8>> = FIXTURE_IDS.iter().map(|id| std::fs::read(output_image(&cfg, id)).unwrap()).collect();
    let second = run_pipeline(&cfg).unwrap();
    let bytes2: Vec<Vec<u8>> = FIXTURE_IDS.iter().map(|id| std::fs::read(output_image(&cfg, id)).unwrap()).collect();

    if bytes1 != bytes2 {
        return Outcome::Fail("output images differ between runs".into());
    }
    if first.without_timings() != second.without_timings() {
        return Outcome::Fail("manifests differ between runs".into());
    }
    if first.records.len() != FIXTURE_IDS.len() || first.failures().count() > 0 {
        return Outcome::Fail(format!("expected {} clean records", FIXTURE_IDS.len()));
    }

    let mut removed = Vec::new();
    for rec in &first.records {
        let report = rec.report.as_ref().unwrap();
        for e in &report.entries {
            if e.verdict == Verdict::Remove {
                removed.push(format!("{}:{}", rec.image_id, e.class_name));
                if !e.normalized_score.is_some_and(|s| s < 0.4) {
                    return Outcome::Fail(format!("{} removed with score {:?}", e.class_name, e.normalized_score));
                }
            }
        }
        let input = image::open(dir.path().join("images").join(format!("{}.png", rec.image_id)))
            .unwrap()
            .to_rgb8();
        let output = image::open(output_image(&cfg, &rec.image_id)).unwrap().to_rgb8();
        let map = fixture_label_map(&rec.image_id);
        if rec.passthrough {
            if input != output {
                return Outcome::Fail(format!("{}: keep-only image not passed through", rec.image_id));
            }
            continue;
        }
        let mask = BinaryMask::load(&cfg.paths.output.join("masks").join(format!("{}.png", rec.image_id))).unwrap();
        let dilated_toaster = dilate(&BinaryMask::from_fn(map.width, map.height, |x, y| map.get(x, y) == TOASTER), 5);
        for y in 0..map.height {
            for x in 0..map.width {
                let same = input.get_pixel(x, y) == output.get_pixel(x, y);
                if !mask.get(x, y) && !same {
                    return Outcome::Fail(format!("{}: pixel ({x},{y}) outside the mask changed", rec.image_id));
                }
                if dilated_toaster.get(x, y) && same {
                    return Outcome::Fail(format!("{}: original pixel ({x},{y}) survives in the removed region", rec.image_id));
                }
            }
        }
    }
    let passthrough = first.records.iter().filter(|r| r.passthrough).count();
    check(
        removed == ["b_toaster_park:toaster"] && passthrough == 4,
        format!("two runs byte-identical; removed {removed:?}; {passthrough} keep-only images pixel-identical"),
    )
}
