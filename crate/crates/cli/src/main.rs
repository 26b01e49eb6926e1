//! `aiswatch`: train, batch-detect, serve, benchmark and report.

mod commands;
mod config;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{Config, Overrides, CONFIG_HELP};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("training set is empty: no track reached the minimum duration")]
    EmptyTraining,
    #[error("model: {0}")]
    Model(String),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::EmptyTraining => 3,
            CliError::Model(_) => 4,
            CliError::Bind { .. } => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "aiswatch", version, about = "Streaming AIS anomaly detection", after_long_help = CONFIG_HELP)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML configuration file (see `--help` for keys)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Model file [default: paths.model]
    #[arg(long, global = true, value_name = "PATH")]
    model: Option<PathBuf>,
    /// Region of interest
    #[arg(
        long,
        global = true,
        value_name = "LATMIN,LATMAX,LONMIN,LONMAX",
        allow_hyphen_values = true
    )]
    roi: Option<String>,
    /// Operator replicas; bench accepts a list such as 1,2,4
    #[arg(long, global = true, value_name = "N", value_delimiter = ',')]
    replicas: Vec<usize>,
    /// MMSI partitions
    #[arg(long, global = true, value_name = "N")]
    partitions: Option<u32>,
    /// serve: ingest address
    #[arg(long, global = true, value_name = "HOST:PORT")]
    listen: Option<String>,
    /// serve: alert sink, file or TCP address
    #[arg(long, global = true, value_name = "PATH|HOST:PORT")]
    alerts: Option<String>,
    /// generate/bench: scenario seed override
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output format
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build tracks from CSV/JSON-lines files and fit a model
    Train {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Score every track of a file: track_id,mmsi,n,k,nfa,decision
    Detect {
        input: PathBuf,
        /// Output file [default: stdout]
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Ingest JSON lines over TCP and emit alerts until stdin closes or a signal arrives
    Serve {
        /// Do not treat end of stdin as a shutdown request
        #[arg(long)]
        ignore_stdin: bool,
    },
    /// Replay a synthetic scenario and write report files per replica count
    Bench {
        /// Scenario file, TOML or JSON [default: built-in three-lane scenario].
        /// Without --model, a model is fitted on the scenario's clean vessels
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Output directory [default: paths.out_dir]
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print or convert a benchmark report
    Report {
        /// report.json or report.csv
        report: PathBuf,
        /// CDF file for a CSV report [default: cdf.csv next to it]
        #[arg(long)]
        cdf: Option<PathBuf>,
    },
    /// Write synthetic traffic and its ground-truth sidecar
    Generate {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Messages file [default: stdout]
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Ground-truth file [default: <out>.truth.csv]
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    let model_flag = g.model.is_some();
    let mut cfg = Config::load(g.config.as_deref())?;
    cfg.apply(&Overrides {
        model: g.model,
        roi: g.roi,
        replicas: g.replicas,
        partitions: g.partitions,
        listen: g.listen,
        alerts: g.alerts,
    })?;
    match cli.command {
        Command::Train { inputs } => commands::train(&cfg, &inputs),
        Command::Detect { input, out } => commands::detect(&cfg, &input, out.as_deref(), g.format),
        Command::Serve { ignore_stdin } => serve::serve(&cfg, !ignore_stdin),
        Command::Bench { scenario, out_dir } => {
            commands::bench(&cfg, scenario.as_deref(), out_dir.as_deref(), g.seed, model_flag)
        }
        Command::Report { report, cdf } => commands::report(&report, cdf.as_deref(), g.format),
        Command::Generate { scenario, out, truth } => {
            commands::generate(scenario.as_deref(), out.as_deref(), truth.as_deref(), g.seed, g.format)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aiswatch: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
