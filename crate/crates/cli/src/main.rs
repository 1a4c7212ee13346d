//! The `kgverify` command: ingest a graph, sample a balanced test set, run
//! verification sessions, and report metrics.
//!
//! Exit codes: 0 clean, 1 usage or configuration error, 2 run completed with
//! partial failures.

mod artifacts;
mod commands;
mod config;
mod error;
mod wiring;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::Overrides;
use crate::error::CliError;

/// Agentic knowledge-graph triple verification.
#[derive(Parser)]
#[command(name = "kgverify", version, arg_required_else_help = true)]
struct Cli {
    /// Run configuration file (TOML); input paths inside it resolve against
    /// its directory. Omitted fields take documented defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override the dataset directory.
    #[arg(long, global = true, value_name = "DIR")]
    dataset: Option<PathBuf>,
    /// Override the verification mode.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Disable a feature group (repeatable).
    #[arg(long = "ablate", global = true, value_enum)]
    ablate: Vec<AblateArg>,
    /// Override the sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the sample size; `verify` also caps its session count here.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Override the session pool width.
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    /// Output path for the command's artifact.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Full tool-using verification loop.
    Agent,
    /// Retrieve every tool's output once, then judge.
    Rag,
    /// Judge from the claim alone.
    Zeroshot,
}

impl ModeArg {
    fn name(self) -> &'static str {
        match self {
            ModeArg::Agent => "agent",
            ModeArg::Rag => "rag",
            ModeArg::Zeroshot => "zeroshot",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AblateArg {
    /// Skip demonstration retrieval.
    Memory,
    /// Skip the strategic plan.
    Planning,
    /// Disable the graph tools.
    Kg,
    /// Disable the wiki and web tools.
    External,
}

impl AblateArg {
    fn name(self) -> &'static str {
        match self {
            AblateArg::Memory => "memory",
            AblateArg::Planning => "planning",
            AblateArg::Kg => "kg",
            AblateArg::External => "external",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load the graph, build or refresh the binary cache, report counts.
    Ingest,
    /// Draw a balanced labeled test set from the graph.
    Sample,
    /// Run verification sessions over a test set or a single claim.
    Verify {
        /// One claim as `head|relation|tail`; names resolve against the
        /// catalog.
        #[arg(long, value_name = "CLAIM", conflicts_with = "testset")]
        triple: Option<String>,
        /// Labeled test-set file produced by `sample`.
        #[arg(long, value_name = "FILE")]
        testset: Option<PathBuf>,
    },
    /// Aggregate session records into metric, tool, and cost tables.
    Report {
        /// Session record file produced by `verify` (repeatable).
        #[arg(long = "sessions", value_name = "FILE", required = true)]
        sessions: Vec<PathBuf>,
        /// Test set to align truth labels against.
        #[arg(long, value_name = "FILE")]
        testset: Option<PathBuf>,
        /// Accept inputs whose config checksums disagree.
        #[arg(long)]
        force: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Partial(msg)) => {
            eprintln!("partial failure: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        dataset: cli.dataset,
        mode: cli.mode.map(|m| m.name().to_string()),
        ablate: cli.ablate.iter().map(|a| a.name().to_string()).collect(),
        seed: cli.seed,
        n: cli.n,
        concurrency: cli.concurrency,
    };
    let eff = config::load(cli.config.as_deref(), &overrides)?;
    match &cli.command {
        Command::Ingest => commands::ingest::run(&eff),
        Command::Sample => commands::sample::run(&eff, cli.out.as_deref()),
        Command::Verify { triple, testset } => commands::verify::run(
            &eff,
            triple.as_deref(),
            testset.as_deref(),
            cli.out.as_deref(),
            cli.n,
        ),
        Command::Report {
            sessions,
            testset,
            force,
        } => commands::report::run(&eff, sessions, testset.as_deref(), cli.out.as_deref(), *force),
    }
}
