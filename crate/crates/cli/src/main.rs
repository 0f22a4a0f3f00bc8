//! `maxsim`: build, search and evaluate two-stage MaxSim indexes.

mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use crate::commands::EvalRequest;
use crate::config::{parse_sweep, CliConfig, Common, Sweep};
use crate::output::Format;

#[derive(Parser, Debug)]
#[command(name = "maxsim", version, about = "Two-stage late-interaction retrieval")]
struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a corpus manifest and persist its index.
    Build {
        /// Overwrite an existing index file.
        #[arg(long)]
        force: bool,
    },
    /// Rank parents for every query.
    Search {
        /// Emit the Stage-1 shortlist only.
        #[arg(long)]
        stage1_only: bool,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        /// Run tag for trec output.
        #[arg(long, default_value = "maxsim")]
        tag: String,
    },
    /// Score rankings against relevance judgments.
    Eval {
        /// Also score the exact oracle and Stage-1 recall of its top results.
        #[arg(long)]
        oracle: bool,
        /// One metric block per value, e.g. `top_m=1,4,12`.
        #[arg(long, value_parser = parse_sweep)]
        sweep: Option<Sweep>,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,10")]
        cutoffs: Vec<usize>,
        /// r in Stage-1 recall of the oracle top-r.
        #[arg(long, default_value_t = 10)]
        recall_top: usize,
        /// Leave queries without relevant judgments out of the means.
        #[arg(long)]
        exclude_no_relevant: bool,
    },
    /// Exhaustive exact MaxSim ranking.
    Oracle {
        /// Keep only the first N parents per query.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        #[arg(long, default_value = "oracle")]
        tag: String,
    },
}

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = CliConfig::resolve(&cli.common, cli.verbose)?;
    log::info!(
        "effective config: {}",
        serde_json::to_string(&cfg).expect("config serializes")
    );
    match cli.command {
        Command::Build { force } => commands::build(&cfg, force),
        Command::Search { stage1_only, format, tag } => {
            commands::search(&cfg, stage1_only, format, &tag)
        }
        Command::Eval { oracle, sweep, cutoffs, recall_top, exclude_no_relevant } => {
            let req = EvalRequest { oracle, sweep, cutoffs, recall_top, exclude_no_relevant };
            commands::eval(&cfg, &req)
        }
        Command::Oracle { limit, format, tag } => commands::oracle(&cfg, limit, format, &tag),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
