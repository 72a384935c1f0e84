use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod inputs;
mod plot;
mod report;

/// Knowledge distillation toolkit for audio tagging students.
#[derive(Debug, Parser)]
#[command(name = "iusp", version)]
struct Cli {
    /// Worker threads for clip generation, feature extraction and suites.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus: WAVs plus train/val/test manifests.
    Synth(SynthArgs),
    /// Extract teacher and student log-mel features for every split.
    Features(FeaturesArgs),
    /// Train one student (or a teacher with `--model teacher`).
    Train(TrainArgs),
    /// Run a setup x LSTM size x seed suite.
    Suite(SuiteArgs),
    /// Grid-search the hint layer pairs of a setup's similarity losses.
    TuneHints(TuneArgs),
    /// Score a predictions CSV against a manifest.
    Eval(EvalArgs),
    /// Render figures and tables from a suite directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub train: usize,
    #[arg(long, default_value_t = 16)]
    pub val: usize,
    #[arg(long, default_value_t = 16)]
    pub test: usize,
    #[arg(long, default_value_t = 10.0)]
    pub clip_seconds: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Dataset directory (defaults to $IUSP_DATA_DIR).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    pub clip_seconds: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Options shared by every training verb. Flags override the config file.
#[derive(Debug, Args)]
pub struct RunOpts {
    /// TOML run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Teacher checkpoint, needed by every setup except BCE.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Dataset directory (defaults to $IUSP_DATA_DIR).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory holding {train,val,test}.feat from `iusp features`.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Clip length when extracting features on the fly.
    #[arg(long)]
    pub clip_seconds: Option<f64>,
    /// Hint pair for SP as `teacher,student`.
    #[arg(long)]
    pub hint_sp: Option<String>,
    /// Hint pair for IUSP as `teacher,student`.
    #[arg(long)]
    pub hint_iusp: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunOpts,
    #[arg(long)]
    pub setup: Option<String>,
    #[arg(long)]
    pub lstm_hidden: Option<usize>,
    /// `student` or `teacher`.
    #[arg(long)]
    pub model: Option<String>,
    /// Teacher conv widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub teacher_channels: Option<Vec<usize>>,
    #[arg(long)]
    pub teacher_kernel: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    #[command(flatten)]
    pub run: RunOpts,
    /// Repeatable; all five setups when absent.
    #[arg(long)]
    pub setup: Vec<String>,
    /// Repeatable; 16, 32, 64 and 128 when absent.
    #[arg(long)]
    pub lstm_hidden: Vec<usize>,
    /// Seeds per cell, counting up from `--seed`.
    #[arg(long, default_value_t = 4)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub run: RunOpts,
    #[arg(long, default_value = "BCE+KD+SP+IUSP")]
    pub setup: String,
    #[arg(long)]
    pub lstm_hidden: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions CSV (clip_id plus one score column per class).
    #[arg(long)]
    pub pred: PathBuf,
    /// Manifest CSV with the true labels.
    #[arg(long)]
    pub labels: PathBuf,
    /// Also write the PR curve (CSV and PNG) and metrics here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Suite output directory containing results.csv.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of the rendered example clips.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4.0)]
    pub clip_seconds: f64,
}

fn category(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<iusp::Error>() {
            return err.category();
        }
        if cause.is::<std::io::Error>() || cause.is::<image::ImageError>() {
            return "io";
        }
    }
    "runtime"
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build_global()
        .map_err(anyhow::Error::from)
        .and_then(|()| match cli.command {
            Command::Synth(a) => commands::synth(&a),
            Command::Features(a) => commands::features(&a),
            Command::Train(a) => commands::train(&a),
            Command::Suite(a) => commands::suite(&a, jobs),
            Command::TuneHints(a) => commands::tune_hints(&a, jobs),
            Command::Eval(a) => commands::eval(&a),
            Command::Report(a) => report::report(&a),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{}]: {msg}", category(&e));
            ExitCode::from(1)
        }
    }
}
