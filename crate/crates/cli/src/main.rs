//! `exactrag` command line: build indexes, answer questions, train dominance
//! models, generate benchmark records and evaluate them.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use exactrag::embeddings::ProviderKind;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    State(String),
    #[error(transparent)]
    Core(#[from] exactrag::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 input error, 3 state mismatch, 4 provider failure, 1 anything else.
    fn exit_code(&self) -> u8 {
        use exactrag::Error as E;
        match self {
            CliError::Input(_) | CliError::Io(_) => 2,
            CliError::State(_) => 3,
            CliError::Core(e) => match e {
                E::Provider { .. } | E::UnparseableOutput { .. } => 4,
                E::FingerprintMismatch { .. } | E::PathLengthMismatch { .. } | E::DimensionMismatch { .. } => 3,
                E::MissingTerminator
                | E::UnknownVertex(_)
                | E::Disconnected { .. }
                | E::NoEdges
                | E::InvalidPathLength { .. }
                | E::UncoverableEdge { .. }
                | E::EmptyGraph
                | E::CapExceeded { .. }
                | E::NoBridgeStar
                | E::LengthMismatch { .. }
                | E::Config(_)
                | E::IndexFormat(_)
                | E::Io(_)
                | E::Json(_) => 2,
                _ => 1,
            },
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "exactrag", version, about = "Exact subgraph retrieval over knowledge graphs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command; each overrides the config file.
#[derive(Args, Debug, Default)]
struct Common {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Graph document (`.json` for the JSON layout)
    #[arg(long, global = true)]
    graph: Option<PathBuf>,
    /// Index bundle file
    #[arg(long, global = true)]
    index: Option<PathBuf>,
    /// Dominance model file (written by `train`, read elsewhere)
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_provider)]
    provider: Option<ProviderKind>,
    /// Path lengths to index (build-index) or the preferred length (query, eval)
    #[arg(long, global = true, value_delimiter = ',')]
    l: Vec<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for evaluation
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    token_budget: Option<usize>,
    /// Output file; stdout when omitted
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

fn parse_provider(s: &str) -> Result<ProviderKind, String> {
    s.parse().map_err(|e: exactrag::Error| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Embed labels, compute dominance vectors and build one index per length
    BuildIndex,
    /// Answer questions (from --question or one per stdin line)
    Query {
        #[arg(long)]
        question: Option<String>,
        /// JSON lines of {"question", "extraction"} for offline extraction
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Train a dominance model on the graph's star subgraphs
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Generate bridge-star question/answer records as JSON lines
    GenDataset {
        #[arg(long, default_value_t = 100)]
        n: usize,
    },
    /// Write a synthetic hub-and-bridge graph document
    SynthGraph {
        #[arg(long, default_value_t = 200)]
        vertices: usize,
        #[arg(long, default_value_t = 40)]
        hubs: usize,
    },
    /// Score records end to end, optionally under perturbation
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Also write per-record results as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Edit counts for a robustness curve, e.g. `1,2,3`
        #[arg(long, value_delimiter = ',')]
        perturb: Vec<usize>,
    },
}

fn resolve(common: Common, command: &Command) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = common.$field {
                cfg.$field = v.into();
            }
        )*};
    }
    set!(graph, index, model, out, provider, seed, jobs, token_budget);
    if !common.l.is_empty() {
        match command {
            Command::BuildIndex => cfg.lengths = common.l.clone(),
            _ if common.l.len() == 1 => cfg.l = Some(common.l[0]),
            _ => return Err(CliError::Input("--l takes a single preferred length here".into())),
        }
    }
    if let Command::Train { epochs, learning_rate } = command {
        if let Some(e) = epochs {
            cfg.train.max_epochs = *e;
        }
        if let Some(r) = learning_rate {
            cfg.train.learning_rate = *r;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(cli.common, &cli.command)?;
    match &cli.command {
        Command::BuildIndex => commands::build_index(&cfg),
        Command::Query { question, replay } => commands::query(&cfg, question.as_deref(), replay.as_deref()),
        Command::Train { .. } => commands::train_model(&cfg),
        Command::GenDataset { n } => commands::gen_dataset(&cfg, *n),
        Command::SynthGraph { vertices, hubs } => commands::synth_graph(&cfg, *vertices, *hubs),
        Command::Eval { dataset, csv, perturb } => commands::eval(&cfg, dataset, csv.as_deref(), perturb),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
