use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;

use malrag_core::config::{parse_levels, Backends, PipelineConfig, Preset};
use malrag_core::evaluator::parse_qa_file;
use malrag_core::pipeline::{
    cmd_eval, cmd_index, cmd_query, cmd_stats, format_stats, open_store, EvalOptions, IndexOptions, IndexStatus,
    PipelineError, Stage,
};
use malrag_core::retriever::{Packing, RetrieverConfig};

#[derive(Parser)]
#[command(name = "malrag", version, about = "Multi-abstraction-level retrieval-augmented generation")]
struct Cli {
    /// TOML configuration; defaults to offline mock backends.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Chunk store directory, overriding the configuration.
    #[arg(long, global = true)]
    store: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment, summarize and embed a corpus into a chunk store.
    Index {
        /// Corpus file (one JSON document per line).
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Answer one question from a finalized store.
    Query {
        question: String,
        #[command(flatten)]
        retrieval: RetrievalFlags,
        /// Write the retrieval record as JSON to PATH, or to stderr without a value.
        #[arg(long, num_args = 0..=1, default_missing_value = "-", value_name = "PATH")]
        audit: Option<PathBuf>,
    },
    /// Answer and score every question of a QA file.
    Eval {
        /// Question file (one JSON object per line).
        #[arg(long)]
        qa: PathBuf,
        #[command(flatten)]
        retrieval: RetrievalFlags,
        /// Use each ground truth as the retrieved context.
        #[arg(long)]
        gold_context: bool,
        /// Report destination; stdout by default.
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
        /// Per-question retrieval and answer records.
        #[arg(long, value_name = "PATH")]
        audit: Option<PathBuf>,
    },
    /// Print per-level chunk counts and average lengths.
    Stats,
}

#[derive(Args, Default)]
struct RetrievalFlags {
    /// One of the twelve named configurations, e.g. mal-tau05 or paragraph-notau.
    #[arg(long)]
    preset: Option<Preset>,
    /// all, vanilla, or a comma-separated list of document, section, paragraph, multi.
    #[arg(long)]
    levels: Option<String>,
    #[arg(long, conflicts_with = "no_tau")]
    tau: Option<f64>,
    /// Keep every chunk that fits the budget.
    #[arg(long)]
    no_tau: bool,
    /// Word budget for the retrieved context.
    #[arg(long)]
    budget: Option<usize>,
    /// skip: keep packing past a chunk that does not fit; stop: end there.
    #[arg(long, value_parser = parse_packing)]
    packing: Option<Packing>,
}

fn parse_packing(s: &str) -> Result<Packing, String> {
    match s {
        "skip" => Ok(Packing::Skip),
        "stop" => Ok(Packing::Stop),
        other => Err(format!("expected skip or stop, got `{other}`")),
    }
}

fn config_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::new(Stage::Config, e)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |e| PipelineError::new(Stage::Store, format!("{}: {e}", path.display()))
}

impl RetrievalFlags {
    fn resolve(&self, cfg: &PipelineConfig) -> Result<RetrieverConfig, PipelineError> {
        let mut rc = match self.preset {
            Some(p) => p.retriever_config(),
            None => cfg.retriever.to_config().map_err(config_err)?,
        };
        if let Some(levels) = &self.levels {
            rc.pool = parse_levels(levels).map_err(config_err)?;
        }
        if let Some(tau) = self.tau {
            rc.tau = Some(tau);
        }
        if self.no_tau {
            rc.tau = None;
        }
        if let Some(b) = self.budget {
            rc.budget_words = b;
        }
        if let Some(p) = self.packing {
            rc.packing = p;
        }
        rc.validate().map_err(config_err)?;
        Ok(rc)
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), PipelineError> {
    match path {
        Some(p) if p != Path::new("-") => fs::write(p, text).map_err(io_err(p)),
        _ => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| PipelineError::new(Stage::Store, e)),
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(config_err)?,
        None => PipelineConfig::default(),
    };
    if let Some(store) = cli.store {
        cfg.store = store;
    }

    match cli.command {
        Command::Index { corpus } => {
            let corpus = corpus
                .or_else(|| cfg.corpus.clone())
                .ok_or_else(|| config_err("no corpus given; pass --corpus or set `corpus` in the configuration"))?;
            if !corpus.is_file() {
                return Err(config_err(format!("corpus file {} does not exist", corpus.display())));
            }
            let splitter = cfg.splitter().map_err(config_err)?;
            let backends = cfg.backends().map_err(config_err)?;
            let opts = IndexOptions {
                corpus: &corpus,
                store: &cfg.store,
                segmenter: cfg.segmenter,
                splitter: &splitter,
                parallelism: cfg.parallelism,
                batch_size: cfg.batch_size,
            };
            let outcome = cmd_index(&opts, backends.extractor.as_ref(), backends.embedder.as_ref())?;
            let status = match outcome.status {
                IndexStatus::Built => "built",
                IndexStatus::Resumed => "resumed and finalized",
                IndexStatus::AlreadyFinalized => "already finalized; nothing to do",
            };
            println!("store {}: {status}", cfg.store.display());
            print!("{}", format_stats(&outcome.manifest));
        }
        Command::Query {
            question,
            retrieval,
            audit,
        } => {
            let rc = retrieval.resolve(&cfg)?;
            let backends = cfg.backends().map_err(config_err)?;
            let template = cfg.template().map_err(config_err)?;
            let (_, db) = open_store(&cfg.store)?;
            let out = cmd_query(
                &db,
                &question,
                &rc,
                backends.embedder.as_ref(),
                backends.chat.as_ref(),
                &template,
                &cfg.retry(),
            )?;
            for w in &out.retrieval.warnings {
                warn!("{w}");
            }
            println!("{}", out.answer.answer);
            if let Some(path) = audit {
                let record = serde_json::to_string(&out.retrieval).expect("serializable") + "\n";
                if path == Path::new("-") {
                    eprint!("{record}");
                } else {
                    fs::write(&path, record).map_err(io_err(&path))?;
                }
            }
        }
        Command::Eval {
            qa,
            retrieval,
            gold_context,
            report,
            audit,
        } => {
            let rc = retrieval.resolve(&cfg)?;
            let text = fs::read_to_string(&qa).map_err(|e| config_err(format!("{}: {e}", qa.display())))?;
            let pairs = parse_qa_file(&text).map_err(|e| PipelineError::new(Stage::Parse, e))?;
            let backends: Backends = cfg.backends().map_err(config_err)?;
            let template = cfg.template().map_err(config_err)?;
            let (_, db) = open_store(&cfg.store)?;
            let opts = EvalOptions {
                retriever: rc,
                gold_context,
                parallelism: cfg.parallelism,
            };
            let out = cmd_eval(&db, &pairs, &opts, &backends, &template, &cfg.retry());
            for w in &out.warnings {
                warn!("{w}");
            }
            for t in out.traces.iter().filter(|t| t.error.is_some()) {
                warn!("question {}: {}", t.question_id, t.error.as_deref().unwrap_or_default());
            }
            write_output(report.as_deref(), &out.report.to_ndjson())?;
            if let Some(path) = audit {
                write_output(Some(&path), &out.audit_ndjson())?;
            }
        }
        Command::Stats => print!("{}", cmd_stats(&cfg.store)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors exit with 1 so that code 2 stays reserved for corpus parsing.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
