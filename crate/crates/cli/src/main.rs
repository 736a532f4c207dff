//! `rmdn`: generate data, train, score, evaluate, ensemble, ablate and
//! contaminate from one JSON experiment configuration.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::FIELDS_HELP;

/// A failed command: the message for stderr and the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const USAGE: u8 = 2;
    pub const DATA: u8 = 3;
    pub const NUMERICAL: u8 = 4;

    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: Self::USAGE, message: message.into() }
    }

    /// Any library error raised while reading or writing data files.
    pub fn data(err: rmdn::Error) -> Self {
        let code = match err {
            rmdn::Error::Numerical(_) | rmdn::Error::NumericalAccuracy(_) | rmdn::Error::NonFiniteGradient { .. } => {
                Self::NUMERICAL
            }
            _ => Self::DATA,
        };
        Self { code, message: err.to_string() }
    }

    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl From<rmdn::Error> for Failure {
    fn from(err: rmdn::Error) -> Self {
        use rmdn::Error::*;
        let code = match &err {
            InvalidArgument(_) | InvalidState(_) => Self::USAGE,
            Numerical(_) | NumericalAccuracy(_) | NonFiniteGradient { .. } => Self::NUMERICAL,
            CorruptFile(_) | Parse { .. } | Io(_) | Json(_) | Csv(_) => Self::DATA,
        };
        Self { code, message: err.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "rmdn", version, about = "Recurrent mixture density anomaly detection experiments")]
#[command(after_long_help = FIELDS_HELP)]
struct Cli {
    /// Caps the number of worker threads.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// Experiment configuration (JSON). Defaults apply to absent fields.
    #[arg(short, long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Overrides one field, e.g. `--set train.lr=1e-3`; repeatable, applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Shorthand for `--set train.seed=N`.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<config::ExperimentConfig, Failure> {
        let mut overrides = self.set.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("train.seed={s}"));
        }
        config::ExperimentConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Writes the synthetic training and evaluation sets to `<out>/train` and `<out>/eval`.
    #[command(after_long_help = FIELDS_HELP)]
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Fits the selected variant and writes `model.rmdn`, `scaler.json` and `loss.csv`.
    #[command(after_long_help = FIELDS_HELP)]
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Training dataset directory; overrides `train_data`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Scores recordings with a trained model and writes a score CSV.
    #[command(after_long_help = FIELDS_HELP)]
    Score {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Dataset directory to score; overrides `eval_data`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Model id written to the table; defaults to the variant name.
        #[arg(long)]
        model_id: Option<String>,
        /// Score CSV to write.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Computes AUC and partial AUC per machine and model from a score CSV.
    #[command(after_long_help = FIELDS_HELP)]
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        scores: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Standardizes score CSVs per machine and combines them with `ensemble` mode.
    #[command(after_long_help = FIELDS_HELP)]
    Ensemble {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Score CSV of one model; repeat for each model.
        #[arg(long, required = true)]
        scores: Vec<PathBuf>,
        /// Training-set score CSV of each model, in the same order as `--scores`.
        #[arg(long)]
        train_scores: Vec<PathBuf>,
        /// Combines the scores as they are, without standardizing.
        #[arg(long)]
        raw: bool,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Trains and evaluates all five variants on one dataset and seed.
    #[command(after_long_help = FIELDS_HELP)]
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Adds noise bursts to a dataset and writes it with a `mask.csv` of hit frames.
    #[command(after_long_help = FIELDS_HELP)]
    Contaminate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Prints the resolved configuration.
    #[command(after_long_help = FIELDS_HELP)]
    Config {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot size the thread pool: {e}")))?;
    }
    match cli.command {
        Command::Generate { cfg, out } => commands::generate(&cfg.load()?, out),
        Command::Train { cfg, data, out } => commands::train(&cfg.load()?, data, out),
        Command::Score { cfg, model, data, model_id, out } => commands::score(&cfg.load()?, &model, data, model_id, &out),
        Command::Eval { cfg, scores, out } => commands::eval(&cfg.load()?, &scores, &out),
        Command::Ensemble { cfg, scores, train_scores, raw, out } => {
            commands::ensemble(&cfg.load()?, &scores, &train_scores, raw, &out)
        }
        Command::Ablate { cfg, out } => commands::ablate(&cfg.load()?, out),
        Command::Contaminate { cfg, data, out } => commands::contaminate(&cfg.load()?, &data, out),
        Command::Config { cfg } => {
            let cfg = cfg.load()?;
            println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
