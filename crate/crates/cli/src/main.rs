use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use occlusion_core::corpus::{build_corpus, load_captions, BoundaryMode, Corpus, CorpusMode};
use occlusion_core::embedding::{project_tsne, render_scatter, train, EmbeddingMatrix, TrainConfig, TsneConfig};
use occlusion_core::eval::{correlate_relations, count_cooccurrence, CooccurrenceStats};
use occlusion_core::inpaint::{inpaint, FloatImage, InpaintConfig};
use occlusion_core::lexicon::{load_lexicon, ClassLexicon};
use occlusion_core::mask::{merge_occlusion_mask, BinaryMask, LabelMap};
use occlusion_core::pipeline::{
    analyze_label_map, parse_stuff_list, run_pipeline, scenes_from_label_dir, summarize, PipelineConfig, RunManifest,
};
use occlusion_core::relation::{detect_occlusions, DetectorConfig, Verdict};
use occlusion_core::{Error, Result};

#[derive(Parser)]
#[command(name = "occlusion", version, about = "Detect and remove out-of-context objects from images")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Modified,
    Original,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    Hard,
    Eop,
}

#[derive(Subcommand)]
enum Command {
    /// Build a one-document-per-image corpus from caption annotations.
    BuildCorpus {
        #[arg(long)]
        captions: PathBuf,
        /// Label list (bundled COCO-Stuff labels by default).
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "modified")]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train skip-gram embeddings on a corpus file.
    TrainEmbeddings {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 128)]
        dim: usize,
        #[arg(long, default_value_t = 3)]
        window: usize,
        #[arg(long, default_value_t = 100_000)]
        steps: usize,
        #[arg(long, default_value_t = 5)]
        negatives: usize,
        #[arg(long, default_value_t = 0.025)]
        learning_rate: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, value_enum, default_value = "hard")]
        boundary: BoundaryArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project an embedding to 2-D with t-SNE.
    #[command(name = "project-2d")]
    Project2d {
        #[arg(long)]
        emb: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also render a scatter plot (PNG).
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Count class co-occurrence over a directory of label maps.
    Stats {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlate embedding cosines with co-occurrence relations.
    Evaluate {
        #[arg(long)]
        emb: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        /// Write the (pair, cosine, relation) points as TSV.
        #[arg(long)]
        scatter: Option<PathBuf>,
    },
    /// Score the things of one label map and print the verdicts.
    Detect {
        #[arg(long)]
        emb: PathBuf,
        #[arg(long)]
        label_map: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Stuff classes to use instead of those in the label map.
        #[arg(long)]
        stuffs: Option<PathBuf>,
        #[arg(long, default_value_t = 0.4)]
        threshold: f64,
        #[arg(long, default_value_t = 0.02)]
        min_area: f64,
        #[arg(long, default_value_t = 5)]
        dilation: u32,
        /// Write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the merged removal mask.
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
    /// Fill the masked region of an image.
    Inpaint {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write an input | output side-by-side image.
        #[arg(long)]
        composite: Option<PathBuf>,
        #[arg(long, default_value_t = 7)]
        patch_size: u32,
        #[arg(long, default_value_t = 2)]
        stride: u32,
        #[arg(long, default_value_t = 200)]
        coarse_iters: usize,
    },
    /// Run the whole pipeline over a dataset described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Summarize a run manifest.
    Report {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command, cli.json) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = e.category();
            if cli.json {
                let v = json!({"error": {"category": cat.as_str(), "code": e.code(), "message": e.to_string()}});
                println!("{v}");
            } else {
                eprintln!("error[{}]: {e}", cat.as_str());
            }
            ExitCode::from(cat.exit_code() as u8)
        }
    }
}

fn lexicon_from(path: Option<&Path>) -> Result<ClassLexicon> {
    match path {
        Some(p) => load_lexicon(p),
        None => Ok(ClassLexicon::coco_stuff()),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn emit(json_out: bool, value: serde_json::Value, text: String) {
    if json_out {
        println!("{value}");
    } else {
        print!("{text}");
    }
}

fn execute(command: Command, json_out: bool) -> Result<()> {
    match command {
        Command::BuildCorpus {
            captions,
            lexicon,
            mode,
            out,
        } => {
            let lex = lexicon_from(lexicon.as_deref())?;
            let mode = match mode {
                ModeArg::Modified => CorpusMode::Modified,
                ModeArg::Original => CorpusMode::Original,
            };
            let corpus = build_corpus(&load_captions(&captions)?, &lex, mode)?;
            write(&out, &corpus.to_text())?;
            let (docs, tokens) = (corpus.documents.len(), corpus.token_count());
            emit(
                json_out,
                json!({"documents": docs, "tokens": tokens, "out": out}),
                format!("{docs} documents, {tokens} tokens -> {}\n", out.display()),
            );
        }
        Command::TrainEmbeddings {
            corpus,
            dim,
            window,
            steps,
            negatives,
            learning_rate,
            seed,
            boundary,
            out,
        } => {
            let corpus = Corpus::from_text(&read(&corpus)?, CorpusMode::Modified)?;
            let cfg = TrainConfig {
                dim,
                window,
                steps,
                negatives_per_pair: negatives,
                learning_rate,
                seed,
                boundary: match boundary {
                    BoundaryArg::Hard => BoundaryMode::HardBoundary,
                    BoundaryArg::Eop => BoundaryMode::LiteralEop,
                },
                ..TrainConfig::default()
            };
            let emb = train(&corpus, &cfg)?;
            emb.save(&out)?;
            emit(
                json_out,
                json!({"vocab": emb.len(), "dim": emb.dim(), "out": out}),
                format!("{} vectors of dim {} -> {}\n", emb.len(), emb.dim(), out.display()),
            );
        }
        Command::Project2d {
            emb,
            perplexity,
            iters,
            seed,
            out,
            plot,
        } => {
            let emb = EmbeddingMatrix::load(&emb)?;
            let cfg = TsneConfig {
                perplexity,
                iters,
                seed,
                ..TsneConfig::default()
            };
            let proj = project_tsne(&emb, &cfg)?;
            write(&out, &proj.to_text())?;
            if let Some(p) = &plot {
                render_scatter(&proj.coords, 512).save(p).map_err(|e| Error::image(p, e))?;
            }
            let kl = proj.kl_history.last().copied();
            emit(
                json_out,
                json!({"points": proj.coords.len(), "final_kl": kl, "out": out}),
                format!("{} points, final KL {:?} -> {}\n", proj.coords.len(), kl, out.display()),
            );
        }
        Command::Stats { labels, lexicon, out } => {
            let lex = lexicon_from(lexicon.as_deref())?;
            let scenes = scenes_from_label_dir(&labels, &lex)?;
            let names = lex.labels().iter().map(|l| l.token().to_string()).collect();
            let stats = count_cooccurrence(&scenes, names);
            stats.save(&out)?;
            emit(
                json_out,
                json!({"images": stats.image_total(), "out": out}),
                format!("{} images counted -> {}\n", stats.image_total(), out.display()),
            );
        }
        Command::Evaluate { emb, stats, scatter } => {
            let emb = EmbeddingMatrix::load(&emb)?;
            let stats = CooccurrenceStats::load(&stats)?;
            let corr = correlate_relations(&emb, &stats)?;
            if let Some(p) = &scatter {
                write(p, &corr.scatter_tsv())?;
            }
            emit(
                json_out,
                json!({"pearson": corr.coefficient, "pairs": corr.pair_count}),
                format!("pearson {:.4}\npairs {}\n", corr.coefficient, corr.pair_count),
            );
        }
        Command::Detect {
            emb,
            label_map,
            lexicon,
            stuffs,
            threshold,
            min_area,
            dilation,
            out,
            mask_out,
        } => {
            let lex = lexicon_from(lexicon.as_deref())?;
            let emb = EmbeddingMatrix::load(&emb)?;
            let map = LabelMap::load(&label_map)?;
            let overrides = match &stuffs {
                Some(p) => Some(parse_stuff_list(&read(p)?, &lex)?),
                None => None,
            };
            let cfg = DetectorConfig {
                similarity_threshold: threshold,
                min_area_fraction: min_area,
                dilation_radius: dilation,
                ..DetectorConfig::default()
            };
            let id = label_map.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let analysis = analyze_label_map(&id, &map, &lex, overrides.as_ref(), &cfg)?;
            let report = detect_occlusions(&emb, &lex, &analysis.scene, &cfg)?;
            let report_json = serde_json::to_string_pretty(&report).expect("report serializes");
            if let Some(p) = &out {
                write(p, &report_json)?;
            }
            if let Some(p) = &mask_out {
                merge_occlusion_mask(&report, &analysis.masks, map.width, map.height)?.mask.save(p)?;
            }
            let mut text = String::new();
            for e in &report.entries {
                let verdict = match e.verdict {
                    Verdict::Keep => "keep",
                    Verdict::Remove => "REMOVE",
                };
                let score = e.normalized_score.map_or("n/a".to_string(), |s| format!("{s:.4}"));
                text.push_str(&format!("{:<20} {score:>8} {verdict}\n", e.class_name));
            }
            emit(json_out, serde_json::to_value(&report).expect("report serializes"), text);
        }
        Command::Inpaint {
            image,
            mask,
            out,
            composite,
            patch_size,
            stride,
            coarse_iters,
        } => {
            let img = FloatImage::load(&image)?;
            let mask = BinaryMask::load(&mask)?;
            let cfg = InpaintConfig {
                patch_size,
                search_stride: stride,
                coarse_iters,
                ..InpaintConfig::default()
            };
            let filled = inpaint(&img, &mask, &cfg)?;
            filled.save(&out)?;
            if let Some(p) = &composite {
                img.side_by_side(&filled).save(p)?;
            }
            emit(
                json_out,
                json!({"masked_pixels": mask.area(), "out": out}),
                format!("filled {} pixels -> {}\n", mask.area(), out.display()),
            );
        }
        Command::Run { config } => {
            let cfg = PipelineConfig::load(&config)?;
            let manifest = run_pipeline(&cfg)?;
            let s = summarize(&manifest);
            let path = cfg.paths.output.join("manifest.json");
            emit(
                json_out,
                json!({"manifest": path, "summary": s}),
                format!(
                    "{} images: {} inpainted, {} passed through, {} failed -> {}\n",
                    s.images,
                    s.inpainted,
                    s.passthrough,
                    s.failed,
                    path.display()
                ),
            );
        }
        Command::Report { manifest } => {
            let m = RunManifest::load(&manifest)?;
            let s = summarize(&m);
            let mut text = format!(
                "{}\nimages {}\ninpainted {}\npassed through {}\nfailed {}\nthings without context {}\n",
                m.tool_version, s.images, s.inpainted, s.passthrough, s.failed, s.no_context_things
            );
            for (code, n) in &s.failures_by_code {
                text.push_str(&format!("  failure {code}: {n}\n"));
            }
            for (class, n) in &s.removals_by_class {
                text.push_str(&format!("  removed {class}: {n}\n"));
            }
            emit(json_out, serde_json::to_value(&s).expect("summary serializes"), text);
        }
    }
    Ok(())
}
