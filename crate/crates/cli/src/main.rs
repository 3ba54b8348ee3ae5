//! `par` command line: meta-training, evaluation, synthetic data and
//! case-study dumps.

mod commands;
mod failure;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use settings::ConfigArgs;

#[derive(Parser, Debug)]
#[command(name = "par", version, about = "Few-shot molecular property prediction with property-aware relation networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Meta-train on the meta-train properties of a dataset.
    Train(TrainArgs),
    /// Fine-tune on fresh support sets of every meta-test property and report ROC-AUC.
    Eval(EvalArgs),
    /// Write a synthetic planted-motif dataset as CSV.
    GenSynth(GenSynthArgs),
    /// Export adjacency matrices and embeddings for hand-picked support sets.
    Dump(DumpArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Dataset CSV with a `smiles` column, an optional `id` column and one column per property.
    #[arg(long)]
    pub data: PathBuf,
    /// Meta-test columns: `prefix` (names starting with `test_`), `last:N` or `test:a,b`.
    #[arg(long, default_value = "prefix")]
    pub split: String,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Worker threads; 0 lets the pool pick.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint to evaluate [default: <out-dir>/checkpoint.json].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Evaluation seeds: a single value, a list `0,3,7` or an inclusive range `0..9`.
    #[arg(long, default_value = "0")]
    pub seeds: String,
    /// Shots per class at evaluation [default: the checkpoint's].
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug)]
pub struct GenSynthArgs {
    /// Number of properties; a fifth of them (at least one) are meta-test.
    #[arg(long, default_value_t = 25)]
    pub tasks: usize,
    #[arg(long, default_value_t = 400)]
    pub mols: usize,
    /// Shots the dataset must support per class.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file [default: <out-dir>/synthetic.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint to load [default: <out-dir>/checkpoint.json].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// CSV with an `id` column naming dataset molecules and one 0/1 column per task.
    #[arg(long)]
    pub support: PathBuf,
    /// Keep every neighbor instead of the top K (for class-imbalanced support sets).
    #[arg(long)]
    pub full_graph: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub run: RunArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::GenSynth(a) => commands::gen_synth(a),
        Command::Dump(a) => commands::dump(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
