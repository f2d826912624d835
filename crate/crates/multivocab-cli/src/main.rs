//! `multivocab` — multilingual vocabulary construction pipeline.
//!
//! Each pipeline stage is a subcommand operating on a shared workdir; stages
//! validate their upstream artifacts against a hashed manifest before
//! running. Exit codes: 0 success, 2 configuration error, 3 missing or stale
//! artifact, 4 data error.

mod config;
mod manifest;
mod stages;

use std::fmt;
use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::PipelineConfig;
use stages::{run_stage, Stage, StageContext, ALL_STAGES};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    MissingArtifact(String),
    Data(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::MissingArtifact(msg) => write!(f, "{msg}"),
            CliError::Data(msg) => write!(f, "{msg}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact(_) => 3,
            CliError::Data(_) => 4,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "multivocab",
    about = "Construct large multilingual subword vocabularies by clustering and capacity allocation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Directory holding all stage artifacts and the manifest.
    #[arg(long)]
    workdir: PathBuf,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-language and per-cluster work.
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Subcommand)]
enum Command {
    /// Temperature-sample the input corpora into per-language working sets.
    Sample(StageArgs),
    /// Train one unigram vocabulary per language and count token frequencies.
    TrainLangs(StageArgs),
    /// Build the shared lexicon and per-language lexical fingerprints.
    Fingerprint(StageArgs),
    /// K-Means-cluster the fingerprints into language groups.
    Cluster(StageArgs),
    /// Measure ALP ladders (ALP at several trained vocabulary sizes).
    Ladder(StageArgs),
    /// Greedily allocate vocabulary capacity per language.
    Allocate(StageArgs),
    /// Build cluster corpora and train per-cluster vocabularies.
    TrainClusters(StageArgs),
    /// Merge the cluster vocabularies into the final multilingual vocabulary.
    Merge(StageArgs),
    /// Emit fertility, coverage, and overlap reports.
    Analyze(StageArgs),
    /// Run every stage in order.
    RunAll {
        #[command(flatten)]
        stage: StageArgs,
        /// Run only the named stage (same as invoking its subcommand).
        #[arg(long, value_name = "STAGE")]
        stage_only: Option<String>,
    },
    /// Tokenize text with a vocabulary file.
    Tokenize {
        /// Vocabulary TSV (per-language, per-cluster, or final).
        #[arg(long)]
        vocab: PathBuf,
        /// Input file; reads stdin when neither this nor TEXT is given.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Separator between printed tokens.
        #[arg(long, default_value = " ")]
        delimiter: String,
        /// Literal text to tokenize (one line).
        text: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Sample(args) => run_one(Stage::Sample, &args),
        Command::TrainLangs(args) => run_one(Stage::TrainLangs, &args),
        Command::Fingerprint(args) => run_one(Stage::Fingerprint, &args),
        Command::Cluster(args) => run_one(Stage::Cluster, &args),
        Command::Ladder(args) => run_one(Stage::Ladder, &args),
        Command::Allocate(args) => run_one(Stage::Allocate, &args),
        Command::TrainClusters(args) => run_one(Stage::TrainClusters, &args),
        Command::Merge(args) => run_one(Stage::Merge, &args),
        Command::Analyze(args) => run_one(Stage::Analyze, &args),
        Command::RunAll { stage, stage_only } => {
            let config = PipelineConfig::load(&stage.config, stage.seed)?;
            let ctx = StageContext {
                config: &config,
                workdir: &stage.workdir,
                workers: stage.workers.max(1),
            };
            match stage_only {
                Some(name) => {
                    let only: Stage = name.parse().map_err(CliError::Config)?;
                    report(run_stage(only, &ctx)?);
                }
                None => {
                    for s in ALL_STAGES {
                        report(run_stage(s, &ctx)?);
                    }
                }
            }
            Ok(())
        }
        Command::Tokenize {
            vocab,
            input,
            delimiter,
            text,
        } => {
            let content = match (text, input) {
                (Some(t), _) => t,
                (None, Some(path)) => std::fs::read_to_string(&path).map_err(|e| {
                    CliError::Data(format!("cannot read {}: {e}", path.display()))
                })?,
                (None, None) => {
                    let mut buf = String::new();
                    std::io::stdin()
                        .read_to_string(&mut buf)
                        .map_err(|e| CliError::Data(format!("cannot read stdin: {e}")))?;
                    buf
                }
            };
            print!("{}", stages::tokenize_lines(&vocab, &content, &delimiter)?);
            Ok(())
        }
    }
}

fn run_one(stage: Stage, args: &StageArgs) -> Result<(), CliError> {
    let config = PipelineConfig::load(&args.config, args.seed)?;
    let ctx = StageContext {
        config: &config,
        workdir: &args.workdir,
        workers: args.workers.max(1),
    };
    report(run_stage(stage, &ctx)?);
    Ok(())
}

fn report(record: manifest::StageRecord) {
    let status = if record.noop { "unchanged" } else { "wrote" };
    eprintln!(
        "[{}] {} {} artifact(s)",
        record.stage,
        status,
        record.outputs.len()
    );
}
