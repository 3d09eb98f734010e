use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Moral-dilemma uncertainty harness.
#[derive(Debug, Parser)]
#[command(name = "moralunc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a scenario corpus (JSONL).
    Generate(GenerateArgs),
    /// Score a corpus with a backend and write choice records.
    Run(RunArgs),
    /// Entropy decomposition per dimension and paired dropout tests.
    Analyze(AnalyzeArgs),
    /// AMCE vectors and L2 distance to a human reference.
    Align(AlignArgs),
    /// Radar, scatter and trajectory plots plus the alignment table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SetArg {
    Uncertainty,
    Alignment,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    set: SetArg,
    /// Scenarios per dimension (uncertainty) or in total (alignment).
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Toy,
    Http,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StyleArg {
    Case,
    Option,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Chat,
    Completions,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "toy")]
    backend: BackendArg,
    /// Backend configuration JSON; flags given explicitly override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long, value_enum)]
    style: Option<StyleArg>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, value_enum)]
    protocol: Option<ProtocolArg>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    /// Stochastic passes averaged per scenario.
    #[arg(long)]
    passes: Option<usize>,
    /// Weight seed of the toy transformer.
    #[arg(long)]
    toy_init_seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    concurrency: usize,
    #[arg(long, default_value_t = 0.05)]
    error_threshold: f64,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Record files, typically one per dropout rate.
    #[arg(long, num_args = 1.., required = true)]
    records: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ClusterArg {
    Scenario,
    Run,
}

#[derive(Debug, Args)]
struct AlignArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    records: Vec<PathBuf>,
    /// Human reference AMCE vector (JSON).
    #[arg(long)]
    human: PathBuf,
    #[arg(long, value_enum, default_value = "scenario")]
    cluster_by: ClusterArg,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// AMCE vector files to overlay on the radar chart.
    #[arg(long, num_args = 1.., required = true)]
    amce: Vec<PathBuf>,
    /// Alignment scores CSV written by `align`.
    #[arg(long)]
    scores: PathBuf,
    /// Uncertainty summaries CSV written by `analyze`.
    #[arg(long)]
    summaries: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(commands::EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Run(a) => commands::run(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Align(a) => commands::align(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
