//! `molsyn`: dataset preparation, annotation, training, evaluation,
//! inference and analysis for the multi-specialist model.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "molsyn", version, about = "Multi-specialist molecular reasoning toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// JSON config; keys left out keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: runs/<unix-time>-seed<seed>].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Config override, e.g. `--set stage1.lr=0.001`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Stratified sampling, aggregation and the 8:1:1 split, or a micro-task fixture.
    PrepareData {
        /// Raw task-record JSONL files.
        #[arg(long)]
        input: Vec<PathBuf>,
        /// Write the micro-task fixture with this many records per task instead.
        #[arg(long)]
        micro: Option<usize>,
    },
    /// Stratified sampling only.
    Sample {
        #[arg(long)]
        input: Vec<PathBuf>,
    },
    /// Chain-of-thought annotation through a chat model.
    Annotate {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Offline scripted replies instead of the HTTP client.
        #[arg(long)]
        mock: Option<PathBuf>,
    },
    /// Removes anchor sentences from self-corrected annotations.
    Denoise {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        mock: Option<PathBuf>,
    },
    /// Runs one training stage, or all three.
    Train {
        /// 1, 2 or 3; omit for the whole pipeline.
        #[arg(long)]
        stage: Option<u8>,
        /// Previous-stage checkpoint when starting at stage 2 or 3.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Paired inference over a dataset and per-task metrics.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        task: Option<String>,
    },
    /// Paired inference on single queries.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        input: Vec<String>,
    },
    /// Weight histograms, density differences, L2 deltas and projections.
    AnalyzeWeights {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Reference checkpoint for L2 deltas and before/after projections.
        #[arg(long)]
        init: Option<PathBuf>,
        /// `concat` (A then B entries) or `product` (BA entries).
        #[arg(long)]
        merge: Option<String>,
        /// Records to project before and after.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Reasoning-chain path frequencies.
    AnalyzeChains {
        #[arg(long)]
        data: Option<PathBuf>,
        /// JSON list of step labels.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
    /// Generation, property screen, captioning and retrosynthesis per candidate.
    DemoPipeline {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Prompt or SMILES. Repeatable.
        #[arg(long)]
        candidate: Vec<String>,
        /// File with one candidate per line.
        #[arg(long)]
        candidates: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(&cli.common, cli.command) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            if let CliError::Usage(_) = e {
                eprintln!("run `molsyn --help` for usage");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
