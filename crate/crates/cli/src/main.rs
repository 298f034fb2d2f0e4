//! `cps`: train, evaluate, analyze and summarize experiments.
//!
//! Exit status is 0 on success; failures print the error category and use
//! the category's exit code (2 config/input, 3 files, 4 numeric/saturation,
//! 5 internal state).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cps::analysis::analyze_masks;
use cps::checkpoint::Checkpoint;
use cps::config::ExperimentConfig;
use cps::select::{StreamEval, Strategy};
use cps::{metrics, runner, Result};

#[derive(Parser)]
#[command(name = "cps", version, about = "Continual prune-and-select experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a TOML experiment config.
    Train {
        config: PathBuf,
        /// Continue each seed from its latest checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Class-incremental evaluation of a checkpoint on its own test splits.
    Eval {
        checkpoint: PathBuf,
        /// maxoutput | is | oracle
        #[arg(long, default_value = "maxoutput")]
        strategy: Strategy,
        #[arg(long, default_value_t = 20)]
        batch_size: usize,
        /// Seed for the test-batch shuffle.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Union, intersection and sharing of the registered masks.
    Analyze {
        checkpoint: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Mean and standard deviation over the seeds of an output directory.
    Report {
        dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, resume } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = runner::run(&cfg, resume)?;
            println!("results in {}", cfg.resolved_output_dir().display());
            print!("{}", summary.render());
        }
        Command::Eval { checkpoint, strategy, batch_size, seed } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let stream = runner::checkpoint_stream(&ckpt)?;
            let eval = StreamEval::new(&ckpt.learner, &stream.tasks)?;
            let r = eval.classify_stream(strategy, batch_size, seed)?;
            println!("strategy {} batch size {batch_size}", strategy.name());
            println!("{:>5} {:>10} {:>10}", "task", "acc %", "select %");
            for (t, (a, s)) in r.accuracy.iter().zip(&r.selection_accuracy).enumerate() {
                println!("{:>5} {:>10.2} {:>10.2}", t + 1, 100.0 * a, 100.0 * s);
            }
            let mean = r.accuracy.iter().sum::<f64>() / r.accuracy.len().max(1) as f64;
            let (sel, _) = metrics::mean_std(&r.selection_accuracy);
            println!("{:>5} {:>10.2} {:>10.2}", "mean", 100.0 * mean, 100.0 * sel);
        }
        Command::Analyze { checkpoint, json } => {
            let stats = analyze_masks(&Checkpoint::load(&checkpoint)?.learner)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&stats).expect("plain data serializes"));
            } else {
                print!("{}", stats.render());
            }
        }
        Command::Report { dir, json } => {
            let summary = runner::report(&dir)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary).expect("plain data serializes"));
            } else {
                print!("{}", summary.render());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
