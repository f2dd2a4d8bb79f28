use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use empdial_cli::config::ModelEntry;
use empdial_cli::fixture::write_fixture;
use empdial_cli::stages::{self, read_contexts, respond};
use empdial_cli::{Error, Outcome, Pipeline, PipelineConfig, Result, Stage};
use empdial_core::records::write_jsonl;
use empdial_eval::EvalService;

#[derive(Parser)]
#[command(name = "empdial", version, about = "Emotion-aware dialog pipeline: subtitles in, rated responses out")]
struct Cli {
    /// Pipeline config (TOML). Built-in defaults when the file does not exist.
    #[arg(long, global = true, default_value = "pipeline.toml")]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides the config.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Rerun stages whose manifests say they are up to date.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutArg {
    /// Also copy the stage's main output here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse subtitle files into speaker turns.
    Ingest {
        /// Corpus directory.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Pre-trained segmenter.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Labelled line pairs to train the segmenter on.
        #[arg(long)]
        train_pairs: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Clean turns and cut them into dialogs.
    Curate(OutArg),
    /// Grow the intent lexicon from seed sentences.
    LexiconExpand(OutArg),
    /// Train the utterance emotion/intent classifier.
    ClassifyTrain,
    /// Label every distinct utterance.
    ClassifyApply(OutArg),
    /// Keep the most emotional dialogs.
    SelectTop {
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Split each dataset into train, valid and test.
    Split,
    TrainTokenizer,
    TrainGenerator,
    TrainPredictor,
    /// Generate responses for contexts read from a JSONL file.
    Respond {
        /// One context per line: an array of utterances or {"context": [...]}.
        #[arg(long)]
        context: PathBuf,
        /// Condition on this label instead of the predicted one.
        #[arg(long)]
        emotion: Option<String>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        block_ngram: Option<usize>,
        /// Model bundle directory; the pipeline's models by default.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Write replies here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score models on the test splits and build the rating set.
    Evaluate {
        /// Models as NAME=DIR; replaces the configured list.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        datasets: Vec<String>,
    },
    /// Pack the rating set into HITs.
    BuildHits(OutArg),
    /// Serve the rating API over HTTP.
    ServeEval {
        #[arg(long)]
        addr: Option<String>,
    },
    /// Run stages in order, skipping those already up to date.
    Run {
        /// Comma-separated stage names; all by default.
        #[arg(long, value_delimiter = ',')]
        stages: Vec<String>,
    },
    /// Write a synthetic corpus and config for a smoke run.
    MakeFixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        files: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = if cli.config.exists() {
        PipelineConfig::load(&cli.config)?
    } else {
        log::warn!("{} not found; using defaults", cli.config.display());
        PipelineConfig::default()
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

fn copy_out(p: &Pipeline, rel: &str, out: &OutArg) -> Result<()> {
    if let Some(dest) = &out.out {
        if let Some(dir) = dest.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::copy(p.ws.path(rel), dest)?;
    }
    Ok(())
}

fn report(stage: Stage, outcome: Outcome) {
    match outcome {
        Outcome::Ran => println!("{}: done", stage.name()),
        Outcome::Skipped => println!("{}: up to date", stage.name()),
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(if p.is_absolute() { p.to_path_buf() } else { std::env::current_dir()?.join(p) })
}

fn run_one(cfg: PipelineConfig, force: bool, stage: Stage, out: Option<(&str, &OutArg)>) -> Result<()> {
    let mut p = Pipeline::new(cfg)?;
    p.ws.force = force;
    report(stage, p.run(stage)?);
    if let Some((rel, o)) = out {
        copy_out(&p, rel, o)?;
    }
    Ok(())
}

fn main_inner(cli: Cli) -> Result<()> {
    if let Command::MakeFixture { out, files, seed } = &cli.command {
        let config = write_fixture(out, *files, *seed)?;
        println!("wrote {files} subtitle files; config at {}", config.display());
        return Ok(());
    }
    let mut cfg = load_config(&cli)?;
    if cfg.threads > 0 {
        // only fails when a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    let force = cli.force;
    match cli.command {
        Command::Ingest {
            input,
            model,
            train_pairs,
            out,
        } => {
            if let Some(i) = input {
                cfg.paths.corpus = Some(absolute(&i)?);
            }
            if let Some(m) = model {
                cfg.paths.segmenter = Some(absolute(&m)?);
                cfg.paths.segmenter_pairs = None;
            }
            if let Some(t) = train_pairs {
                cfg.paths.segmenter_pairs = Some(absolute(&t)?);
            }
            run_one(cfg, force, Stage::Ingest, Some((stages::TURNS, &out)))
        }
        Command::Curate(out) => run_one(cfg, force, Stage::Curate, Some((stages::DIALOGS, &out))),
        Command::LexiconExpand(out) => run_one(cfg, force, Stage::LexiconExpand, Some((stages::LEXICON, &out))),
        Command::ClassifyTrain => run_one(cfg, force, Stage::ClassifyTrain, None),
        Command::ClassifyApply(out) => run_one(cfg, force, Stage::ClassifyApply, Some((stages::DISTRIBUTIONS, &out))),
        Command::SelectTop { k, out } => {
            if let Some(k) = k {
                cfg.select.k = k;
            }
            run_one(cfg, force, Stage::SelectTop, Some((stages::OSED, &out)))
        }
        Command::Split => run_one(cfg, force, Stage::Split, None),
        Command::TrainTokenizer => run_one(cfg, force, Stage::TrainTokenizer, None),
        Command::TrainGenerator => run_one(cfg, force, Stage::TrainGenerator, None),
        Command::TrainPredictor => run_one(cfg, force, Stage::TrainPredictor, None),
        Command::Evaluate { models, datasets } => {
            if !models.is_empty() {
                cfg.evaluate.models = models
                    .iter()
                    .map(|m| {
                        let (name, dir) = m
                            .split_once('=')
                            .ok_or_else(|| Error::Config(format!("--models expects NAME=DIR, got {m:?}")))?;
                        let dir = if dir == stages::MODELS { PathBuf::from(dir) } else { absolute(Path::new(dir))? };
                        Ok(ModelEntry { name: name.into(), dir })
                    })
                    .collect::<Result<_>>()?;
            }
            if !datasets.is_empty() {
                cfg.evaluate.datasets = datasets;
            }
            run_one(cfg, force, Stage::Evaluate, None)
        }
        Command::BuildHits(out) => run_one(cfg, force, Stage::BuildHits, Some((stages::HITS, &out))),
        Command::ServeEval { addr } => {
            let addr = addr.unwrap_or_else(|| cfg.serve.addr.clone());
            let addr: std::net::SocketAddr = addr.parse().map_err(|_| Error::Config(format!("bad address {addr:?}")))?;
            let p = Pipeline::new(cfg)?;
            let hits = p.verified_hits()?;
            let service = EvalService::open(hits, p.cfg.rating.clone(), &p.ws.path(stages::EVENTS))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(empdial_eval::server::serve(Arc::new(service), addr))?;
            Ok(())
        }
        Command::Respond {
            context,
            emotion,
            beam,
            block_ngram,
            models,
            out,
        } => {
            let mut generation = cfg.generation.clone();
            if let Some(b) = beam {
                generation.beam_size = b;
            }
            if let Some(n) = block_ngram {
                generation.block_ngram = n;
            }
            generation.validate()?;
            let p = Pipeline::new(cfg)?;
            let dir = models.unwrap_or_else(|| p.ws.path(stages::MODELS));
            let bundle = stages::load_bundle(&dir, p.labels.clone(), generation)?;
            let replies = respond(&bundle, &read_contexts(&context)?, emotion.as_deref())?;
            match out {
                Some(path) => write_jsonl(&path, &replies)?,
                None => {
                    for r in &replies {
                        println!("{}", serde_json::to_string(r)?);
                    }
                }
            }
            Ok(())
        }
        Command::Run { stages } => {
            let mut p = Pipeline::new(cfg)?;
            p.ws.force = force;
            let list = if stages.is_empty() {
                p.stages()
            } else {
                stages
                    .iter()
                    .map(|s| Stage::parse(s).ok_or_else(|| Error::Config(format!("unknown stage {s:?}"))))
                    .collect::<Result<_>>()?
            };
            for s in list {
                report(s, p.run(s)?);
            }
            Ok(())
        }
        Command::MakeFixture { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
