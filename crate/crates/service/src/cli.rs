//! Operator commands: fixtures, training, evaluation, rendering and serving.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use sketchdial_core::categories::CategoryRegistry;
use sketchdial_core::clipart::ClipArtMapping;
use sketchdial_core::codraw::{by_split, load_codraw, Split};
use sketchdial_core::embeddings::EmbeddingTable;
use sketchdial_core::evaluate::{replay_evaluate, replay_evaluate_with, SimilarityReport};
use sketchdial_core::fixtures::write_fixtures;
use sketchdial_core::generator::{GeneratorConfig, ObjectGenerator};
use sketchdial_core::manifest::Manifest;
use sketchdial_core::proposer::{build_examples, CompositionProposer, ProposerConfig};
use sketchdial_core::quickdraw::load_quickdraw;
use sketchdial_core::scene::Scene;
use sketchdial_core::similarity::{ExternalScorer, SimilarityWeights};

use crate::engine::{Engine, GeneratorBank};
use crate::error::{Result, ServiceError};
use crate::http;
use crate::service::SessionService;
use crate::session::render_scene;

#[derive(Debug, Parser)]
#[command(
    name = "sketchdial",
    version,
    about = "Conversational sketch authoring"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the desk-scale dialogue, embedding and stroke corpora.
    Fixtures {
        #[arg(long, default_value = "fixtures")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the composition proposer on the manifest's training sessions.
    TrainProposer {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON file with proposer settings; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// JSON-lines loss log.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Train one object generator per stroke corpus in the manifest.
    TrainGenerators {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Restrict to these categories.
        #[arg(long)]
        category: Vec<String>,
        #[arg(long)]
        steps: Option<usize>,
        /// Smaller encoder and decoder widths for CPU runs.
        #[arg(long)]
        compact: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Replay recorded instructions and score the final scenes.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Shell command that reads `{"pred": scene, "truth": scene}` on stdin and prints a score.
        #[arg(long)]
        external: Option<String>,
        /// JSON-lines report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a scene JSON file to SVG or PNG (chosen by extension).
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 800)]
        width: usize,
        /// Category registry naming generator checkpoints; clip-art silhouettes otherwise.
        #[arg(long)]
        categories: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        proposer: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        categories: Option<PathBuf>,
        #[arg(long)]
        clipart: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory for persisted sessions.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn mapping_for(m: &Manifest) -> Result<ClipArtMapping> {
    Ok(match &m.clipart {
        Some(p) => ClipArtMapping::load(p)?,
        None => ClipArtMapping::builtin(),
    })
}

fn split_from(key: &str) -> Result<Split> {
    Split::from_key(key).ok_or_else(|| ServiceError::BadRequest(format!("unknown split {key:?}")))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fixtures { out, seed } => {
            let manifest = write_fixtures(&out, seed)?;
            println!("{}", manifest.display());
        }
        Command::TrainProposer {
            manifest,
            out,
            config,
            epochs,
            lr,
            metrics,
        } => {
            let m = Manifest::load(&manifest)?;
            let mut cfg: ProposerConfig = match config {
                Some(p) => read_json(&p)?,
                None => ProposerConfig::default(),
            };
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(l) = lr {
                cfg.lr = l;
            }
            let mapping = mapping_for(&m)?;
            let mut sessions = load_codraw(&m.codraw, &mapping)?;
            if let Some(n) = m.session_limit {
                sessions.truncate(n);
            }
            let emb = EmbeddingTable::load(&m.embeddings, None)?;
            let build = |split| {
                build_examples(
                    &by_split(&sessions, split),
                    &emb,
                    cfg.turn_order,
                    cfg.context_turns,
                    cfg.pack_sessions,
                )
            };
            let train = build(Split::Train)?;
            let val = build(Split::Val)?;
            log::info!(
                "{} training and {} validation examples",
                train.len(),
                val.len()
            );
            let mut model = CompositionProposer::new(cfg)?;
            let mut log_file = metrics.map(File::create).transpose()?.map(BufWriter::new);
            let report = model.train(
                &train,
                &val,
                log_file.as_mut().map(|w| w as &mut dyn Write),
                Some(&out),
            )?;
            model.save(&out)?;
            println!(
                "best epoch {} loss {:.6}",
                report.best_epoch, report.best_loss
            );
        }
        Command::TrainGenerators {
            manifest,
            out_dir,
            category,
            steps,
            compact,
            config,
        } => {
            let m = Manifest::load(&manifest)?;
            std::fs::create_dir_all(&out_dir)?;
            let mut registry = match &m.categories {
                Some(p) => CategoryRegistry::load(p)?,
                None => CategoryRegistry::builtin(),
            };
            for src in &m.strokes {
                if !category.is_empty() && !category.contains(&src.category) {
                    continue;
                }
                let mut cfg = match (&config, compact) {
                    (Some(p), _) => read_json(p)?,
                    (None, true) => GeneratorConfig::compact(&src.category),
                    (None, false) => GeneratorConfig::default(),
                };
                if let Some(s) = steps {
                    cfg.steps = s;
                }
                let corpus = load_quickdraw(&src.path, &src.category, src.splits)?;
                let ckpt = out_dir.join(format!("{}.ckpt", src.category));
                let mut log_file = BufWriter::new(File::create(
                    out_dir.join(format!("{}.metrics.jsonl", src.category)),
                )?);
                let mut g = ObjectGenerator::new(cfg)?;
                let report = g.train_corpus(&corpus, Some(&mut log_file), Some(&ckpt))?;
                g.save(&ckpt)?;
                println!(
                    "{}: best step {} L_R {:.6}",
                    src.category, report.best_step, report.best_loss
                );
                match registry.get_mut(&src.category) {
                    Some(entry) => entry.checkpoint = Some(std::path::absolute(&ckpt)?),
                    None => log::warn!("category {} is not in the registry", src.category),
                }
            }
            let path = out_dir.join("categories.json");
            registry.save(&path)?;
            println!("{}", path.display());
        }
        Command::Evaluate {
            manifest,
            checkpoint,
            split,
            external,
            out,
        } => {
            let m = Manifest::load(&manifest)?;
            let mapping = mapping_for(&m)?;
            let sessions = by_split(&load_codraw(&m.codraw, &mapping)?, split_from(&split)?);
            let emb = EmbeddingTable::load(&m.embeddings, None)?;
            let model = CompositionProposer::load(&checkpoint)?;
            let report: SimilarityReport = match external {
                Some(cmd) => {
                    let scorer = ExternalScorer {
                        program: "sh".into(),
                        args: vec!["-c".into(), cmd],
                    };
                    replay_evaluate_with(&model, &sessions, &emb, &scorer)?
                }
                None => {
                    let weights = match &m.similarity {
                        Some(p) => SimilarityWeights::load(p)?,
                        None => SimilarityWeights::default(),
                    };
                    replay_evaluate(&model, &sessions, &emb, &weights)?
                }
            };
            if let Some(p) = out {
                let mut w = BufWriter::new(File::create(p)?);
                report.write_jsonl(&mut w)?;
                w.flush()?;
            }
            print!("{}", report.table());
        }
        Command::Render {
            scene,
            out,
            width,
            categories,
            seed,
        } => {
            let scene = Scene::from_json(&std::fs::read_to_string(&scene)?)?;
            let registry = match categories {
                Some(p) => CategoryRegistry::load(p)?,
                None => CategoryRegistry::new(Vec::new())?,
            };
            let bank = GeneratorBank::load(registry, ClipArtMapping::builtin())?;
            let canvas = render_scene(&scene, &bank, seed)?;
            render_to_file(&canvas, &out, width)?;
            println!("{}", out.display());
        }
        Command::Serve {
            proposer,
            embeddings,
            categories,
            clipart,
            addr,
            data_dir,
            seed,
        } => {
            let engine = Engine::load(
                &proposer,
                &embeddings,
                categories.as_deref(),
                clipart.as_deref(),
            )?;
            let service = Arc::new(SessionService::new(engine, data_dir, seed)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(http::serve(service, addr))?;
        }
    }
    Ok(())
}

/// Writes a canvas as PNG when the path ends in `.png`, SVG otherwise.
pub fn render_to_file(
    canvas: &crate::canvas::CanvasRendering,
    out: &Path,
    width: usize,
) -> Result<()> {
    if width == 0 {
        return Err(ServiceError::BadRequest("width must be positive".into()));
    }
    if out
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
    {
        let file = BufWriter::new(File::create(out)?);
        canvas.to_bitmap(width)?.write_png(file)?;
    } else {
        std::fs::write(out, canvas.to_svg(width))?;
    }
    Ok(())
}
