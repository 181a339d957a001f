//! `tablegraph`: synthetic data, training, evaluation and inspection of the
//! word-box graph labeler.

pub mod commands;
pub mod config;
pub mod failure;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use tablegraph_core::metrics::Split;

use config::Overrides;
use failure::{Failure, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "tablegraph", version, about = "Line-item table detection on word-box graphs")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Adaptation,
    Generalization,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Adaptation => Split::Adaptation,
            SplitArg::Generalization => Split::Generalization,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic invoice dataset into DIR/dataset.jsonl.
    Synth {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the network; writes the best checkpoint, history, reports and manifest.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the adaptation and generalization splits.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Split file written by `train`; recomputed from the seed if absent.
        #[arg(long)]
        splits: Option<PathBuf>,
        /// Evaluate one split only.
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-box class probabilities for every page.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump the neighbor graph and reading order of one page.
    Graph {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        doc: String,
        #[arg(long, default_value_t = 0)]
        page: usize,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient check of every layer and loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Add this value to every analytic gradient (checks the checker).
        #[arg(long, default_value_t = 0.0)]
        inject_fault: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score the logistic-regression baseline with `--neighbors k`.
    Baseline {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth { overrides, out } => commands::synth(&overrides, &out),
        Command::Train { dataset, overrides, out } => commands::train(&overrides, &dataset, &out),
        Command::Eval {
            checkpoint,
            dataset,
            splits,
            split,
            overrides,
            out,
        } => commands::eval(&overrides, &checkpoint, &dataset, splits.as_deref(), split.map(Split::from), &out),
        Command::Predict { checkpoint, dataset, out } => commands::predict_cmd(&checkpoint, &dataset, &out),
        Command::Graph {
            dataset,
            doc,
            page,
            overrides,
            out,
        } => commands::graph(&overrides, &dataset, &doc, page, &out),
        Command::Gradcheck { seed, inject_fault, out } => commands::gradcheck(seed, inject_fault, out.as_deref()),
        Command::Baseline { dataset, overrides, out } => commands::baseline(&overrides, &dataset, &out),
    }
}


/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn run_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            // Printing can only fail on a closed stream; nothing useful to do then.
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}
