//! `greenwave`: simulate, generate datasets, train surrogates and search
//! signal settings. Every command writes into a run directory holding a
//! `config.resolved.json` copy of everything that determined its outputs.

#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

mod commands;
mod error;
mod reference;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::{CliError, EXIT_CODES};

#[derive(Parser, Debug)]
#[command(name = "greenwave", version, about = "Traffic-signal surrogate modelling toolkit", after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build, import or check road networks.
    #[command(subcommand)]
    Net(NetCommand),
    /// Run one simulation and report waiting time.
    #[command(after_help = EXIT_CODES)]
    Simulate(SimulateArgs),
    /// Sample distinct settings, simulate each and write a dataset CSV.
    #[command(after_help = EXIT_CODES)]
    GenDataset(GenDatasetArgs),
    /// Train a surrogate on a dataset and report test metrics.
    #[command(after_help = EXIT_CODES)]
    Train(TrainArgs),
    /// Score a model on a dataset, or a predictions CSV against targets.
    #[command(after_help = EXIT_CODES)]
    Evaluate(EvaluateArgs),
    /// Rank several metrics reports.
    #[command(after_help = EXIT_CODES)]
    Compare(CompareArgs),
    /// Genetic search over signal settings.
    #[command(after_help = EXIT_CODES)]
    Optimize(OptimizeArgs),
    /// Finite-difference gradient checks of every architecture.
    #[command(after_help = EXIT_CODES)]
    Gradcheck(GradcheckArgs),
    /// Print the markdown command and config reference.
    #[command(hide = true)]
    Reference,
}

#[derive(Subcommand, Debug)]
pub enum NetCommand {
    /// Generate a rows x cols grid of signalized intersections.
    #[command(after_help = EXIT_CODES)]
    Grid(GridArgs),
    /// Convert an OpenStreetMap XML extract.
    #[command(after_help = EXIT_CODES)]
    OsmImport(OsmImportArgs),
    /// Check a network file and print a summary.
    #[command(after_help = EXIT_CODES)]
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// Experiment config (TOML or JSON); flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; defaults to `<runs-dir>/<command>-<config hash>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Parent directory for hashed run directories.
    #[arg(long)]
    pub runs_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    /// Number of intersection rows.
    #[arg(long)]
    pub rows: usize,
    /// Number of intersection columns.
    #[arg(long)]
    pub cols: usize,
    /// Cells per segment (7.5 m each).
    #[arg(long, default_value_t = 40)]
    pub segment_cells: u32,
    /// Network JSON file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct OsmImportArgs {
    /// OpenStreetMap XML file.
    #[arg(long)]
    pub input: PathBuf,
    /// Network JSON file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Network JSON file.
    #[arg(long)]
    pub net: PathBuf,
}

/// Demand flags shared by `simulate`, `gen-dataset` and `optimize`.
#[derive(Args, Debug, Default)]
pub struct SimFlags {
    /// Simulated seconds.
    #[arg(long)]
    pub duration: Option<u64>,
    /// Spawn probability per second on every entry.
    #[arg(long, conflicts_with_all = ["demand_a", "demand_b"])]
    pub demand: Option<f64>,
    /// Spawn probability on entries feeding phase-A approaches.
    #[arg(long, requires = "demand_b")]
    pub demand_a: Option<f64>,
    /// Spawn probability on entries feeding phase-B approaches.
    #[arg(long, requires = "demand_a")]
    pub demand_b: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Network JSON file.
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// Comma-separated `gA0,gB0,off0,gA1,...`.
    #[arg(long, conflicts_with = "random_setting")]
    pub setting: Option<String>,
    /// Sample a uniform setting with this seed.
    #[arg(long)]
    pub random_setting: Option<u64>,
    /// Simulation RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub sim: SimFlags,
    /// Re-verify occupancy and signal compliance every step.
    #[arg(long)]
    pub debug_checks: bool,
    /// Also write a JSON-lines vehicle trace.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Args, Debug)]
pub struct GenDatasetArgs {
    #[command(flatten)]
    pub common: Common,
    /// Network JSON file.
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// Number of rows.
    #[arg(long)]
    pub n: Option<usize>,
    /// Master seed for settings, per-row simulation seeds and the split.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parallel simulation workers; results do not depend on this.
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub sim: SimFlags,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum KindArg {
    Fcnn,
    Gcn,
    Gnn,
    TransformerOnestep,
    TransformerTwostep,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset CSV; `<name>.meta.json` next to it is used when present.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model kind with default hyperparameters.
    #[arg(long, value_enum, conflicts_with = "model_config")]
    pub model: Option<KindArg>,
    /// Model config file (JSON or TOML, tagged by `kind`).
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Network file; required for gcn and gnn.
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// Seed for initialization, shuffling and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the number of epochs of every training stage.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Trained model directory.
    #[arg(long, requires = "data", conflicts_with_all = ["preds", "targets"])]
    pub model: Option<PathBuf>,
    /// Dataset CSV scored by `--model`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Dataset split scored by `--model`.
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Predictions CSV with columns `row_index,prediction_s`.
    #[arg(long, requires = "targets")]
    pub preds: Option<PathBuf>,
    /// Targets: a dataset CSV (row index = line order) or a predictions-style CSV.
    #[arg(long, requires = "preds")]
    pub targets: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    /// Metrics JSON files, optionally labelled as `NAME=PATH`.
    #[arg(long = "metrics", required = true, num_args = 1..)]
    pub metrics: Vec<String>,
    /// Add the constant-mean baseline computed on this dataset's test split.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitnessArg {
    Surrogate,
    Simulator,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Fitness source; defaults to the config's `ga.fitness`.
    #[arg(long, value_enum)]
    pub fitness: Option<FitnessArg>,
    /// Trained model directory (surrogate fitness).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Network file (simulator fitness and elite verification).
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// Individuals per generation.
    #[arg(long)]
    pub population: Option<usize>,
    /// Generations including the initial population.
    #[arg(long)]
    pub generations: Option<usize>,
    /// Seed for the initial population and all genetic operators.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulator runs averaged per fitness value.
    #[arg(long)]
    pub sim_seeds: Option<u32>,
    /// Re-simulate this many final elites and report their errors.
    #[arg(long)]
    pub verify_top: Option<usize>,
    #[command(flatten)]
    pub sim: SimFlags,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Seed for the random parameters and inputs.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            eprintln!("{}", CliError::usage(first).to_json_line());
            return ExitCode::from(2);
        }
    };
    match commands::dispatch(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.kind.code() as u8)
        }
    }
}
