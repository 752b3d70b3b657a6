//! Command-line surface behind the `gpta` binary.
//!
//! Exit codes are part of the interface: 0 success, 1 usage error,
//! 2 validation error, 3 runtime or transport error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::dataset::{load_jsonl, synth_generate};
use crate::error::{Error, Result};
use crate::history::score_prefix;
use crate::metrics::MetricKind;
use crate::report::emit_report;
use crate::student::StudentParams;
use crate::trainer::{load_config, run as run_training, RunState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "gpta",
    version,
    about = "Train a prefix-conditioned classifier together with a prefix-proposing LLM",
    after_help = "Remote TA backends read their API key from GPTA_API_KEY."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Run the alternating training loop.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run directory (default: ./gpta-run).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a state_epoch{N}.json checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a student checkpoint on a JSONL dataset.
    Eval {
        /// best_student.json or a state_epoch{N}.json file.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "")]
        prefix: String,
        #[arg(long, default_value = "accuracy")]
        metric: MetricKind,
        #[arg(long, default_value_t = 0)]
        hash_seed: u64,
    },
    /// Write metrics.csv and curves.svg for a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic keyword corpus as JSONL.
    GenSynth {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        vocab: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `argv` (including the program name). Help and version requests
/// come back as errors too; see [`exit_code_for_usage`].
pub fn parse_args<I, T>(argv: I) -> Result<Command, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(argv).map(|c| c.command)
}

pub fn exit_code_for_usage(e: &clap::Error) -> i32 {
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
        _ => EXIT_USAGE,
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_) | Error::Parse { .. } | Error::Json(_) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

fn load_student(path: &PathBuf) -> Result<StudentParams> {
    match StudentParams::load(path) {
        Ok(s) => Ok(s),
        Err(Error::Json(first)) => RunState::load(path)
            .map(|s| s.student)
            .map_err(|_| Error::Json(first)),
        Err(e) => Err(e),
    }
}

/// Executes a parsed command, returning a line to print on success.
pub fn execute(cmd: Command) -> Result<String> {
    match cmd {
        Command::Train {
            config,
            out,
            resume,
        } => {
            let cfg = load_config(&config)?;
            let state = resume.map(RunState::load).transpose()?;
            let out = out.unwrap_or_else(|| PathBuf::from("gpta-run"));
            let outcome = run_training(&cfg, Some(&out), state)?;
            let best = &outcome.report.best;
            Ok(format!(
                "best prefix {:?} scored {:.4} ({}) in epoch {}; run written to {}",
                best.prefix,
                best.score,
                cfg.metric,
                best.epoch,
                out.display()
            ))
        }
        Command::Eval {
            checkpoint,
            data,
            prefix,
            metric,
            hash_seed,
        } => {
            let mut student = load_student(&checkpoint)?;
            student.freeze();
            let data = load_jsonl(&data)?;
            if data.class_count() > student.class_count() {
                return Err(Error::validation(format!(
                    "dataset has {} classes but the checkpoint only {}",
                    data.class_count(),
                    student.class_count()
                )));
            }
            let score = score_prefix(&student, &prefix, &data, metric, hash_seed)?;
            Ok(format!("{metric} {score:.6}"))
        }
        Command::Report { run, out } => {
            let report = emit_report(&run, &out)?;
            Ok(format!(
                "{} epochs written to {}",
                report.epochs.len(),
                out.display()
            ))
        }
        Command::GenSynth {
            classes,
            per_class,
            noise,
            seed,
            vocab,
            out,
        } => {
            let d = synth_generate(classes, per_class, vocab, noise, seed)?;
            d.write_jsonl(&out)?;
            Ok(format!("{} examples written to {}", d.len(), out.display()))
        }
    }
}

/// Parses, runs and reports; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cmd = match parse_args(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return exit_code_for_usage(&e);
        }
    };
    match execute(cmd) {
        Ok(msg) => {
            println!("{msg}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
