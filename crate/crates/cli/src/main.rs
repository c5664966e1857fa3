mod commands;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use laneforecast::model::Pretext;

#[derive(Debug, Parser)]
#[command(name = "laneforecast", version, about = "Lane-graph motion forecasting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic driving scenes.
    Gen(GenArgs),
    /// Export pseudo-labels for every scene.
    Labels(LabelsArgs),
    /// Train a forecasting model, optionally with a pretext task.
    Train(TrainArgs),
    /// Report forecasting metrics for a checkpoint or a forecast file.
    Eval(EvalArgs),
    /// Feature similarity and generalization studies.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Draw scenes with their forecasts as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Generator seed [default: 0].
    #[arg(long, env = "SSLLANES_SEED")]
    pub seed: Option<u64>,
    /// Number of scenes [default: 2000].
    #[arg(long, env = "SSLLANES_N")]
    pub n: Option<usize>,
    /// Output file (JSON lines). Holds every scene unless --val-out is set.
    #[arg(long, env = "SSLLANES_OUT")]
    pub out: PathBuf,
    /// Write a validation split here and the training split to --out.
    #[arg(long)]
    pub val_out: Option<PathBuf>,
    /// Generator settings as JSON; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Region weights such as `A=0.8,B=0.2`.
    #[arg(long)]
    pub region_mix: Option<String>,
}

#[derive(Debug, Args)]
pub struct LabelsArgs {
    #[arg(long, env = "SSLLANES_SCENES")]
    pub scenes: PathBuf,
    #[arg(long, env = "SSLLANES_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "SSLLANES_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Fraction of every lane to mask.
    #[arg(long, default_value_t = laneforecast::pseudolabels::DEFAULT_MASK_RATIO)]
    pub mask_ratio: f64,
    /// Goal success radius in meters.
    #[arg(long, default_value_t = laneforecast::pseudolabels::DEFAULT_GOAL_EPSILON)]
    pub epsilon: f64,
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    #[arg(long, env = "SSLLANES_PRETEXT", default_value = "none")]
    pub pretext: Pretext,
    #[arg(long, env = "SSLLANES_HIDDEN", default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, env = "SSLLANES_MODES", default_value_t = 6)]
    pub modes: usize,
}

#[derive(Debug, Args, Clone)]
pub struct OptimArgs {
    #[arg(long, env = "SSLLANES_STEPS", default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, env = "SSLLANES_BATCH_SIZE", default_value_t = 32)]
    pub batch_size: usize,
    /// Step at which the learning rate drops; defaults to 80% of --steps.
    #[arg(long)]
    pub lr_decay_step: Option<usize>,
    #[arg(long, env = "SSLLANES_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Random rotation augmentation in 30 degree steps.
    #[arg(long)]
    pub augment: bool,
    /// Progress line every this many steps (0 disables).
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = "SSLLANES_SCENES")]
    pub scenes: PathBuf,
    /// Pseudo-label file from `labels`; overrides labels computed on the fly.
    #[arg(long, env = "SSLLANES_LABELS")]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Checkpoint whose map encoder initializes this run.
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "SSLLANES_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, env = "SSLLANES_SCENES")]
    pub scenes: PathBuf,
    /// Run directory or checkpoint file.
    #[arg(long, env = "SSLLANES_CHECKPOINT", required_unless_present = "forecasts")]
    pub checkpoint: Option<PathBuf>,
    /// Precomputed forecasts (JSON lines of id, modes, scores).
    #[arg(long, conflicts_with = "checkpoint")]
    pub forecasts: Option<PathBuf>,
    /// Mode counts to report [default: 1 and the model's mode count].
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
    /// Write the metric table as CSV.
    #[arg(long, env = "SSLLANES_OUT")]
    pub out: Option<PathBuf>,
    /// Write model forecasts as JSON lines.
    #[arg(long)]
    pub dump_forecasts: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Pairwise CKA of fused agent features across checkpoints.
    Cka(CkaArgs),
    /// Train baseline and pretext variants and run the six generalization settings.
    Suite(SuiteArgs),
}

#[derive(Debug, Args)]
pub struct CkaArgs {
    /// Run directories or checkpoint files.
    #[arg(long, value_delimiter = ',', required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, env = "SSLLANES_SCENES")]
    pub scenes: PathBuf,
    /// At most this many scenes.
    #[arg(long, default_value_t = 500)]
    pub limit: usize,
    /// CSV file for the similarity matrix.
    #[arg(long, env = "SSLLANES_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    /// Training scenes.
    #[arg(long, env = "SSLLANES_SCENES")]
    pub scenes: PathBuf,
    /// Held-out scenes.
    #[arg(long)]
    pub eval_scenes: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "none,mask,d2i,maneuver,goal")]
    pub pretexts: Vec<Pretext>,
    #[arg(long, env = "SSLLANES_HIDDEN", default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, env = "SSLLANES_MODES", default_value_t = 6)]
    pub modes: usize,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Fraction of the training scenes kept in the train-fraction setting.
    #[arg(long, default_value_t = 0.25)]
    pub train_fraction: f64,
    /// Output directory.
    #[arg(long, env = "SSLLANES_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long, env = "SSLLANES_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long, env = "SSLLANES_SCENES")]
    pub scenes: PathBuf,
    /// Number of scenes to draw.
    #[arg(long, default_value_t = 10)]
    pub limit: usize,
    #[arg(long, env = "SSLLANES_OUT")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Labels(a) => commands::labels(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Analyze(AnalyzeCommand::Cka(a)) => commands::cka(a),
        Command::Analyze(AnalyzeCommand::Suite(a)) => commands::suite(a),
        Command::Plot(a) => commands::plot(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
