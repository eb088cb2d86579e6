mod commands;
mod run_manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rfsf_core::Error;

#[derive(Parser)]
#[command(name = "rfsf", version, about = "UAV flight-state classification from RF captures")]
struct Cli {
    /// Worker threads for the data-parallel stages.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labelled synthetic I/Q captures and a manifest.
    Synth(SynthArgs),
    /// Turn a manifest of captures into a bag container.
    Preprocess(PreprocessArgs),
    /// Train the conditional GAN on a bag container.
    Train(TrainArgs),
    /// Score a checkpoint on a bag container.
    Eval(EvalArgs),
    /// Train and score the five ablation variants over several seeds.
    Ablate(AblateArgs),
    /// Per-instance attention and saliency for one bag.
    Explain(ExplainArgs),
    /// Analytic MAC counts for a model configuration.
    Complexity(ComplexityArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Label set: SYNTH3, DRONERF10 or DRONEDETECT21.
    #[arg(long, default_value = "SYNTH3")]
    pub states: String,
    #[arg(long)]
    pub count_per_state: usize,
    /// dronedetect or dronerf.
    #[arg(long, default_value = "dronedetect")]
    pub profile: String,
    /// SNR in dB, a single value or LO:HI.
    #[arg(long, default_value = "5:20")]
    pub snr: String,
    /// Samples per capture; defaults to five bags' worth under the default
    /// preprocessing.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Preprocessing JSON; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub bags: PathBuf,
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    /// Overrides the seed of the training config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the epoch count of the training config.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Head {
    Disc,
    Mil,
    Both,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub bags: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub head: Head,
    /// Output directory for the reports.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub bags: PathBuf,
    /// Held-out bags; without it a source-disjoint split of --bags is used.
    #[arg(long)]
    pub test_bags: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "7,8,9")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub bags: PathBuf,
    #[arg(long)]
    pub bag_index: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ComplexityArgs {
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// 2 for bad arguments or configuration, 3 for I/O and file formats, 4 for
/// numerical failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format(_) | Error::Json(_) | Error::Csv(_) => 3,
        Error::Numerical(_) => 4,
        Error::Config(_) | Error::Contract(_) | Error::Shape { .. } | Error::LayerShape { .. } | Error::Index { .. } => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RFSF_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = cli.jobs.map_or(Ok(()), rfsf_core::par::set_jobs).and_then(|()| match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Explain(a) => commands::explain_cmd(a),
        Command::Complexity(a) => commands::complexity(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
