use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(
    name = "guardmatch",
    version,
    about = "Semi-supervised harmful/unharmful text classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read JSONL files, drop unusable examples and write a clean corpus.
    Ingest {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "prompt")]
        task: String,
        #[arg(long, short)]
        output: PathBuf,
        /// Where to write the filter report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Keep examples without a label.
        #[arg(long)]
        allow_unlabeled: bool,
    },
    /// Carve validation and test sets out of a corpus.
    Split {
        corpus: PathBuf,
        #[arg(long, default_value = "prompt")]
        task: String,
        #[arg(long, default_value_t = 0.1)]
        val_frac: f64,
        #[arg(long, default_value_t = 0.1)]
        test_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Receives pool.jsonl, validation.jsonl and test.jsonl.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Populate the augmentation cache for a corpus.
    Augment {
        corpus: PathBuf,
        #[arg(long, default_value = "prompt")]
        task: String,
        #[arg(long)]
        cache: PathBuf,
        /// llm, backtranslation or mock.
        #[arg(long)]
        kind: String,
        /// Comma-separated generators: endpoint slots for llm, pivot
        /// languages for backtranslation, names for mock.
        #[arg(long, value_delimiter = ',')]
        generators: Vec<String>,
        #[arg(long, default_value_t = 4)]
        max_in_flight: usize,
    },
    /// Train one cell on a split directory.
    Train {
        /// Directory written by `split`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "prompt")]
        task: String,
        #[arg(long)]
        algorithm: Option<String>,
        #[arg(long)]
        n_labeled: usize,
        #[arg(long, default_value = "mock")]
        augmentation: String,
        #[arg(long)]
        seed: Option<u64>,
        /// TOML file with training configuration fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long, default_value = "runs")]
        run_dir: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Score a checkpoint on a labeled JSONL file.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "prompt")]
        task: String,
    },
    /// Run a full experiment grid from a TOML spec.
    Experiment {
        spec: PathBuf,
        /// Receives report.csv and report.json.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Render a history file or a metrics report as CSV or JSON.
    Report {
        input: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(commands::Status::Complete) => ExitCode::SUCCESS,
        Ok(commands::Status::Partial(n)) => {
            eprintln!("{n} cell(s) failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
