mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{Failure, PredictArgs};
use config::{Overrides, RunConfig};
use finsent::dataset::Format;

#[derive(Parser)]
#[command(name = "finsent", version, about = "Sentiment scores for financial headlines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Tsv,
    Jsonl,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Tsv => Format::Tsv,
            FormatArg::Jsonl => Format::Jsonl,
        }
    }
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Labeled training data
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    n_models: Option<usize>,
    /// Randomly initialized token rows instead of lexicon rows
    #[arg(long)]
    no_embeddings: bool,
    /// Skip company and number masking
    #[arg(long)]
    no_preprocessing: bool,
    /// Leave the rule-based valence feature out
    #[arg(long)]
    no_vader: bool,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    affective: Option<PathBuf>,
    #[arg(long)]
    valence: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self, test: Option<PathBuf>) -> Result<RunConfig, Failure> {
        let o = Overrides {
            data: self.data.clone(),
            test,
            format: self.format.map(Into::into),
            seed: self.seed,
            folds: self.folds,
            n_models: self.n_models,
            no_embeddings: self.no_embeddings,
            no_preprocessing: self.no_preprocessing,
            no_vader: self.no_vader,
            embeddings: self.embeddings.clone(),
            affective: self.affective.clone(),
            valence: self.valence.clone(),
        };
        RunConfig::resolve(self.config.as_deref(), &o).map_err(Failure::Invalid)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train an ensemble and write model files with a manifest
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "models")]
        models_dir: PathBuf,
    },
    /// Score headlines with a trained ensemble
    Predict {
        #[arg(long)]
        models_dir: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Input rows may lack the score column
        #[arg(long)]
        unlabeled: bool,
        /// Overrides the config snapshot stored with the models
        #[arg(long)]
        config: Option<PathBuf>,
        /// Prediction TSV; stdout when absent
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a predictions file against gold labels
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// JSON report path
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// k-fold cross-validation of the ensemble
    Cv {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "finsent-cv")]
        output: PathBuf,
    },
    /// Full, no-embeddings and no-preprocessing variants side by side
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Held-out test set; cross-validation when absent
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value = "finsent-ablation")]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { run, models_dir } => commands::train(&run.resolve(None)?, &models_dir),
        Command::Predict {
            models_dir,
            data,
            format,
            unlabeled,
            config,
            output,
        } => commands::predict(&PredictArgs {
            models_dir,
            data,
            format: format.map(Into::into),
            unlabeled,
            config,
            output,
        }),
        Command::Evaluate {
            predictions,
            gold,
            format,
            output,
        } => commands::evaluate(&predictions, &gold, format.map(Into::into), output.as_deref()),
        Command::Cv { run, output } => commands::cv(&run.resolve(None)?, &output),
        Command::Ablate { run, test, output } => commands::ablate(&run.resolve(test)?, &output),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
