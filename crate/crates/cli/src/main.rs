//! `pegs`: disintegrate a categorical dataset into perturbable building
//! blocks, synthesise private records from them, and evaluate the results.

mod commands;
mod error;
mod grid;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, CliResult, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "pegs", version, about = "Differentially private categorical data synthesis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the bundled hospital-like dataset and its schema.
    Generate(GenerateArgs),
    /// Build the hashed count tables from a dataset.
    Disintegrate(DisintegrateArgs),
    /// Produce synthetic datasets.
    Synthesize(SynthesizeArgs),
    /// Fit the GLM conditionals used by the PMI engine.
    PmiFit(PmiFitArgs),
    /// Compare synthetic datasets with the original.
    Evaluate(EvaluateArgs),
    /// Simulate an attribute-inference attack.
    Attack(AttackArgs),
    /// Merge evaluation reports into a long-format R-U table.
    RuMap(RuMapArgs),
    /// Run an algorithm x epsilon experiment grid from a JSON config.
    PaperGrid(PaperGridArgs),
    /// Re-run a command from its manifest and verify its outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CsvArgs {
    /// Field delimiter of input CSV files.
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Cell text read as missing.
    #[arg(long, default_value = "")]
    pub missing: String,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 20_000)]
    pub rows: usize,
    #[arg(long, default_value_t = pegs_core::generator::DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub schema_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DisintegrateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Number of most informative features kept exactly in each hash key.
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub csv: CsvArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Engine {
    Pegs,
    Pmi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrivacyKind {
    /// epsilon-DP per record.
    Dp,
    /// epsilon-DP per block of chained records (PeGS.rs).
    DpBlock,
    /// Entropy l-diversity of every conditional.
    Ldiv,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long, value_enum, default_value_t = Engine::Pegs)]
    pub engine: Engine,
    /// Building blocks file (PeGS engine).
    #[arg(long)]
    pub blocks: Option<PathBuf>,
    /// Fitted models file (PMI engine).
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PrivacyKind::Dp)]
    pub privacy: PrivacyKind,
    /// Privacy budget; per record for `dp`, per block for `dp-block`.
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub block_size: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub l: Option<f64>,
    /// Records per synthetic dataset.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Number of synthetic datasets.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path; `{k}` is replaced by the dataset number (1-based).
    #[arg(long, default_value = "synth_{k}.csv")]
    pub out: String,
    /// CSV of seed records. Without it seeds are drawn from the stored
    /// marginals, so the original data is never read.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Write per-feature sampling traces of the first records as JSON lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub trace_count: usize,
    #[command(flatten)]
    pub csv: CsvArgs,
}

#[derive(Debug, Args)]
pub struct PmiFitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Ridge strength.
    #[arg(long, default_value_t = pegs_core::pmi::DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Choose the ridge strength per feature by k-fold cross-validation.
    #[arg(long)]
    pub cv_folds: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.0001,0.001,0.01,0.1")]
    pub cv_grid: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub csv: CsvArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub orig: PathBuf,
    /// Glob of synthetic CSV files.
    #[arg(long)]
    pub synth: String,
    #[arg(long)]
    pub schema: PathBuf,
    /// Comma-separated subset of marginal,conditional,regression,attack,uniqueness.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
    /// JSON evaluation config; defaults to the hospital setup restricted to
    /// the schema's features.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Algorithm label; read from the synthetic files' manifest when absent.
    #[arg(long)]
    pub algorithm: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub csv: CsvArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttackKindArg {
    Categorical,
    Numeric,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub orig: PathBuf,
    #[arg(long)]
    pub synth: String,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub target: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub given: Vec<String>,
    /// Defaults to numeric for features with numeric representatives.
    #[arg(long, value_enum)]
    pub kind: Option<AttackKindArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub csv: CsvArgs,
}

#[derive(Debug, Args)]
pub struct RuMapArgs {
    /// Glob of report JSON files.
    #[arg(long)]
    pub reports: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PaperGridArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

fn init_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("PEGS_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Usage(format!("PEGS_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(CliError::Usage("PEGS_THREADS must be at least 1".into()));
        }
        // a second initialisation (replay in-process) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `argv` (without the program name) into a command.
pub fn parse(argv: &[String]) -> Result<Cli, clap::Error> {
    Cli::try_parse_from(std::iter::once("pegs".to_string()).chain(argv.iter().cloned()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = match parse(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = init_threads().and_then(|_| commands::run(cli.command, argv));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
