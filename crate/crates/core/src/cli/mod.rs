//! Command-line front end: `train`, `eval`, `generate`, `gradcheck`,
//! `synth-data` and `baseline`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime or
//! numerical failure. Diagnostics go to stderr only.

pub mod checkpoint;
mod commands;
pub mod config;
pub mod gradcheck;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use checkpoint::Checkpoint;
pub use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "trgan", version, about = "Semi-supervised text regression with a conditional GAN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print MAE and RMSE of a checkpoint on a labeled corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Decode sampled sequences from a checkpoint's generator.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Finite-difference check of every layer.
    Gradcheck {
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Write a synthetic corpus, its embeddings and a training config.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        labeled: usize,
        #[arg(long)]
        unlabeled: usize,
        #[arg(long)]
        validation: usize,
        #[arg(long)]
        doc_len: usize,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        seed: u64,
        /// Label documents with a planted affine function of their pooled
        /// embedding instead of the mean word value.
        #[arg(long)]
        linear_labels: bool,
    },
    /// Ridge regression over mean-pooled embeddings.
    Baseline {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        alpha: f64,
    },
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train { config } => commands::train(&config),
        Command::Eval { checkpoint, corpus } => commands::eval(&checkpoint, &corpus),
        Command::Generate { checkpoint, n, seed } => commands::generate(&checkpoint, n, seed),
        Command::Gradcheck { inject_fault } => commands::gradcheck(inject_fault.as_deref()),
        Command::SynthData {
            out,
            labeled,
            unlabeled,
            validation,
            doc_len,
            sigma,
            seed,
            linear_labels,
        } => {
            let mut spec = crate::data::SynthSpec::new(labeled, unlabeled, validation, doc_len, sigma, seed);
            if linear_labels {
                spec.label_fn = crate::data::LabelFn::PlantedLinear;
            }
            commands::synth_data(&out, &spec)
        }
        Command::Baseline {
            embeddings,
            train,
            test,
            alpha,
        } => commands::baseline(&embeddings, &train, &test, alpha),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                1
            } else {
                2
            }
        }
    }
}
