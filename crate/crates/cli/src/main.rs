//! `aqg`: answer-aware question generation pipeline.
//!
//! Subcommands cover the full loop: prepare-data → train → generate →
//! evaluate, plus grad-check for verifying backward rules. Settings come
//! from defaults, then an optional key=value config file, then flags.
//! Exit codes: 0 success, 1 usage/configuration, 2 data, 3 numeric abort.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aqg_core::commands::{
    build_run_config, cmd_evaluate, cmd_generate, cmd_grad_check, cmd_prepare_data, cmd_train,
};
use aqg_core::Error;

#[derive(Parser)]
#[command(name = "aqg", version, about = "Answer-aware question generation pipeline")]
struct Cli {
    /// Key=value config file, applied before flag overrides.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Scale profile: desk or paper.
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Conditioning mechanisms: comma-separated list of ap,rs,cp,aa, or "base".
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Custom-product scaling constant.
    #[arg(long, global = true)]
    k: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Beam width for generation.
    #[arg(long, global = true)]
    beam: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a corpus into per-split archives plus a vocabulary.
    PrepareData {
        /// SQuAD-format JSON input; omit to use the built-in synthetic corpus.
        #[arg(long, value_name = "FILE")]
        raw: Option<PathBuf>,
        /// Newline-separated example-id files for the three splits.
        #[arg(long, num_args = 3, value_names = ["TRAIN", "DEV", "TEST"])]
        splits: Option<Vec<PathBuf>>,
        /// Output directory.
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train a model on prepared data.
    Train {
        /// Directory produced by prepare-data.
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Run directory for checkpoint.bin and loss.csv.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Continue from the checkpoint already in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Generate questions for a prepared split from a checkpoint.
    Generate {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        /// Split name: train, dev, or test.
        #[arg(long, default_value = "dev")]
        split: String,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Predictions file to write (JSON lines).
        #[arg(long, default_value = "predictions.jsonl")]
        out: PathBuf,
    },
    /// Score prediction files against a prepared split.
    Evaluate {
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, default_value = "dev")]
        split: String,
        /// Predictions file; repeat the flag for a multi-row report.
        #[arg(long = "pred", required = true, value_name = "FILE")]
        predictions: Vec<PathBuf>,
        /// QA oracle: lexical, gold, or empty.
        #[arg(long)]
        oracle: Option<String>,
        /// Report basename; writes <out>.json and <out>.txt.
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Verify backward rules against central finite differences.
    GradCheck {
        /// Deliberately break one rule to exercise the failure path.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        Error::NumericAbort(_) | Error::NonFiniteGradient { .. } => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> aqg_core::Result<ExitCode> {
    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(v) = &cli.profile {
        overrides.push(("profile".into(), v.clone()));
    }
    if let Some(v) = &cli.mode {
        overrides.push(("mode".into(), v.clone()));
    }
    if let Some(v) = cli.k {
        overrides.push(("k".into(), v.to_string()));
    }
    if let Some(v) = cli.seed {
        overrides.push(("seed".into(), v.to_string()));
    }
    if let Some(v) = cli.beam {
        overrides.push(("beam".into(), v.to_string()));
    }
    if let Command::Evaluate { oracle: Some(v), .. } = &cli.command {
        overrides.push(("oracle".into(), v.clone()));
    }
    let run = build_run_config(cli.config.as_deref(), &overrides)?;

    match &cli.command {
        Command::PrepareData { raw, splits, out } => {
            let split_paths: Option<[&Path; 3]> = match splits {
                Some(v) => Some([v[0].as_path(), v[1].as_path(), v[2].as_path()]),
                None => None,
            };
            cmd_prepare_data(raw.as_deref(), split_paths, out, run.vocab_size)?;
        }
        Command::Train { data, out, resume } => {
            cmd_train(&run, data, out, *resume)?;
        }
        Command::Generate { data, split, checkpoint, out } => {
            cmd_generate(&run, data, split, checkpoint, out)?;
        }
        Command::Evaluate { data, split, predictions, out, .. } => {
            cmd_evaluate(
                &run,
                data,
                split,
                predictions,
                &out.with_extension("json"),
                &out.with_extension("txt"),
            )?;
        }
        Command::GradCheck { inject_fault } => {
            if !cmd_grad_check(*inject_fault) {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    aqg_core::threads::configure_from_env();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return if usage_error { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
