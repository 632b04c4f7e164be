//! `voiceshield` command-line driver.

mod commands;
mod stream;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use voiceshield::{Error, ErrorCategory};

#[derive(Parser, Debug)]
#[command(name = "voiceshield", version, about = "Noise-free speech protection against voice cloning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-speaker corpus.
    GenCorpus(GenCorpusArgs),
    /// Train the four speaker encoders on a corpus.
    TrainEncoders(TrainArgs),
    /// Protect one recording with the offline pipeline.
    Protect(ProtectArgs),
    /// Real-time mode: calibrate a profile or stream audio through one.
    #[command(subcommand)]
    Livemask(LivemaskCommand),
    /// Score verification trials with the held-out encoder.
    Evaluate(EvaluateArgs),
    /// Apply an adaptive-attack transform to a recording.
    Attack(AttackArgs),
}

#[derive(Args, Debug)]
struct GenCorpusArgs {
    #[arg(long)]
    speakers: usize,
    #[arg(long)]
    utts: usize,
    #[arg(long)]
    seconds: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct ProtectArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    rirs: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    /// Pipeline configuration JSON; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Speaker id of the input, excluded from the target pool.
    #[arg(long)]
    speaker: Option<String>,
}

#[derive(Subcommand, Debug)]
enum LivemaskCommand {
    /// Fit a universal mask and impulse response to a speaker's corpus.
    Calibrate(CalibrateArgs),
    /// Filter audio through a profile in fixed-size chunks.
    Stream(StreamArgs),
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    rirs: PathBuf,
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Calibration configuration JSON; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StreamArgs {
    #[arg(long)]
    profile: PathBuf,
    /// WAV file, or `-` for raw little-endian f32 on stdin.
    #[arg(long = "in")]
    input: String,
    /// WAV file, or `-` for raw little-endian f32 on stdout.
    #[arg(long)]
    out: String,
    #[arg(long, default_value_t = 1024)]
    chunk: usize,
    /// Sample rate of raw input; defaults to the profile's rate.
    #[arg(long)]
    rate: Option<u32>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    trials: PathBuf,
    #[arg(long)]
    models: PathBuf,
    /// `fixed:<value>` or `eer` (calibrated on the manifest's labels).
    #[arg(long, default_value = "fixed:0.25")]
    threshold: String,
    /// Writes the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Writes a 2-D projection of the probe embeddings as CSV.
    #[arg(long)]
    projection: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[arg(long, value_enum)]
    method: commands::Method,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Candidate impulse response for `deconv`.
    #[arg(long)]
    rir: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-3)]
    beta: f64,
    #[arg(long, default_value_t = 8)]
    bits: u32,
    #[arg(long, default_value_t = 8000)]
    rate: u32,
    #[arg(long, default_value_t = 4000.0)]
    cutoff: f64,
    #[arg(long, default_value_t = 32)]
    iterations: usize,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e.category() {
                ErrorCategory::Io => 3,
                ErrorCategory::Validation => 4,
                ErrorCategory::Numerical => 5,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => match e.category() {
                ErrorCategory::Io => write!(f, "i/o failure: {e}"),
                ErrorCategory::Validation => write!(f, "validation failure: {e}"),
                ErrorCategory::Numerical => write!(f, "numerical failure: {e}"),
            },
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(a),
        Command::TrainEncoders(a) => commands::train_encoders(a),
        Command::Protect(a) => commands::protect(a),
        Command::Livemask(LivemaskCommand::Calibrate(a)) => commands::calibrate(a),
        Command::Livemask(LivemaskCommand::Stream(a)) => stream::run(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Attack(a) => commands::attack(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("voiceshield: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
